//! Exhaustive minimum-reload oracle for small straight-line programs.
//!
//! The program is replayed as a stream of register demands: operands that
//! must be resident, temporaries and destinations that need a register but
//! no reload, and names that die. Whenever a demand finds the register file
//! full, every possible victim is tried. The result is the fewest reloads
//! any eviction strategy can achieve under the same demand stream the
//! allocator produces. Liveness is recomputed here from the source, without
//! the analysis module.

use std::collections::HashMap;

use thiserror::Error;

use crate::uil::{Ident, Operand, Program, Rhs, Statement};

pub const MAX_STATEMENTS: usize = 10;
pub const MAX_VARIABLES: usize = 6;
pub const MAX_REGISTERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("the oracle handles only a straight-line entry body without calls")]
    NotStraightLine,
    #[error("{0} statements exceed the oracle bound of {MAX_STATEMENTS}")]
    TooManyStatements(usize),
    #[error("{0} variables exceed the oracle bound of {MAX_VARIABLES}")]
    TooManyVariables(usize),
    #[error("{0} registers is outside the oracle's range of 2..={MAX_REGISTERS}")]
    Registers(usize),
    #[error("no eviction order fits this program in the register file")]
    Infeasible,
}

/// Bit index of a variable (0..6) or an operand temporary (6..).
type Item = u8;
const TEMP_BASE: Item = MAX_VARIABLES as Item;

#[derive(Clone, Debug)]
enum Op {
    /// Make `item` resident at cost 1 if it is not, never evicting `protect`.
    Load {
        item: Item,
        protect: u16,
    },
    /// Find a register for a value produced in place, at no cost.
    Acquire {
        item: Item,
        protect: u16,
    },
    Drop(u16),
    /// Read once without needing a register of its own (the return value).
    Final(Item),
}

struct Lowering {
    ids: Vec<Ident>,
}

impl Lowering {
    fn item(&mut self, v: &Ident) -> Result<Item, OracleError> {
        if let Some(i) = self.ids.iter().position(|x| x == v) {
            return Ok(i as Item);
        }
        if self.ids.len() == MAX_VARIABLES {
            return Err(OracleError::TooManyVariables(self.ids.len() + 1));
        }
        self.ids.push(v.clone());
        Ok((self.ids.len() - 1) as Item)
    }
}

/// Does the value `v` holds after statement `i` get read later?
fn read_later(body: &[Statement], i: usize, v: &Ident) -> bool {
    for s in &body[i + 1..] {
        if s.reads().contains(&v) {
            return true;
        }
        if s.def() == Some(v) {
            return false;
        }
    }
    false
}

fn bit(i: Item) -> u16 {
    1 << i
}

fn lower(p: &Program) -> Result<Vec<Op>, OracleError> {
    if !p.definitions.is_empty() || p.body.iter().any(|s| matches!(s, Statement::If { .. }) || s.callee().is_some()) {
        return Err(OracleError::NotStraightLine);
    }
    if p.body.len() > MAX_STATEMENTS {
        return Err(OracleError::TooManyStatements(p.body.len()));
    }
    let mut lw = Lowering { ids: Vec::new() };
    let mut ops = Vec::new();
    for (i, s) in p.body.iter().enumerate() {
        let (operands, dst): (Vec<&Operand>, Option<&Ident>) = match s {
            Statement::Assign { dst, rhs } => {
                let ops = match rhs {
                    Rhs::Operand(Operand::Imm(_)) => vec![],
                    Rhs::Operand(o) => vec![o],
                    Rhs::BinOp(_, Operand::Imm(_), Operand::Imm(_)) => vec![],
                    Rhs::BinOp(_, a @ Operand::Var(_), Operand::Imm(_)) => vec![a],
                    Rhs::BinOp(op, Operand::Imm(_), b @ Operand::Var(_)) if op.is_commutative() => vec![b],
                    Rhs::BinOp(_, a, b) => vec![a, b],
                    Rhs::MemRead { base, index } => vec![base, index],
                    Rhs::Call { .. } => unreachable!("rejected above"),
                };
                (ops, Some(dst))
            }
            Statement::MemWrite { base, index, src } => (vec![base, index, src], None),
            Statement::Return(Operand::Var(v)) => {
                let it = lw.item(v)?;
                ops.push(Op::Final(it));
                continue;
            }
            Statement::Return(Operand::Imm(_)) => continue,
            Statement::If { .. } | Statement::Call { .. } => unreachable!("rejected above"),
        };
        let mut vars: Vec<Item> = Vec::new();
        let mut dying = 0u16;
        for o in &operands {
            if let Operand::Var(v) = o {
                let it = lw.item(v)?;
                if !vars.contains(&it) {
                    vars.push(it);
                }
                if !read_later(&p.body, i, v) || dst == Some(v) {
                    dying |= bit(it);
                }
            }
        }
        let mut imms: Vec<i64> = Vec::new();
        for o in &operands {
            if let Operand::Imm(n) = o {
                if !imms.contains(n) {
                    imms.push(*n);
                }
            }
        }
        let mut protect = vars.iter().fold(0u16, |m, &v| m | bit(v));
        for &v in &vars {
            ops.push(Op::Load { item: v, protect });
        }
        let mut temps = 0u16;
        for t in 0..imms.len() {
            let item = TEMP_BASE + t as Item;
            ops.push(Op::Acquire { item, protect });
            protect |= bit(item);
            temps |= bit(item);
        }
        let mut gone = dying | temps;
        if let Some(d) = dst {
            let it = lw.item(d)?;
            gone |= bit(it);
            ops.push(Op::Drop(gone));
            ops.push(Op::Acquire { item: it, protect: 0 });
            if !read_later(&p.body, i, d) {
                ops.push(Op::Drop(bit(it)));
            }
        } else {
            ops.push(Op::Drop(gone));
        }
    }
    Ok(ops)
}

struct Search<'a> {
    ops: &'a [Op],
    registers: u32,
    memo: HashMap<(usize, u16), Option<u64>>,
}

impl Search<'_> {
    /// Fewest reloads from op `at` with `resident` in registers; `None` if
    /// some demand cannot be met.
    fn best(&mut self, at: usize, resident: u16) -> Option<u64> {
        let Some(op) = self.ops.get(at) else { return Some(0) };
        if let Some(&v) = self.memo.get(&(at, resident)) {
            return v;
        }
        let result = match *op {
            Op::Drop(mask) => self.best(at + 1, resident & !mask),
            Op::Final(item) => {
                let cost = u64::from(resident & bit(item) == 0);
                self.best(at + 1, resident).map(|c| c + cost)
            }
            Op::Load { item, protect } | Op::Acquire { item, protect } => {
                let cost = u64::from(matches!(op, Op::Load { .. }));
                if resident & bit(item) != 0 {
                    self.best(at + 1, resident)
                } else if resident.count_ones() < self.registers {
                    self.best(at + 1, resident | bit(item)).map(|c| c + cost)
                } else {
                    let mut best: Option<u64> = None;
                    for victim in 0..16 {
                        let b = bit(victim);
                        if resident & b != 0 && protect & b == 0 {
                            if let Some(c) = self.best(at + 1, (resident & !b) | bit(item)) {
                                best = Some(best.map_or(c, |x| x.min(c)));
                            }
                        }
                    }
                    best.map(|c| c + cost)
                }
            }
        };
        self.memo.insert((at, resident), result);
        result
    }
}

/// The minimum number of reloads (`load` instructions) any eviction choice
/// achieves for `p` on a machine with `registers` registers.
pub fn belady_oracle(p: &Program, registers: usize) -> Result<u64, OracleError> {
    if !(2..=MAX_REGISTERS).contains(&registers) {
        return Err(OracleError::Registers(registers));
    }
    let ops = lower(p)?;
    let mut s = Search { ops: &ops, registers: registers as u32, memo: HashMap::new() };
    s.best(0, 0).ok_or(OracleError::Infeasible)
}

/// Whether `p` and `registers` are within the oracle's bounds.
pub fn within_bounds(p: &Program, registers: usize) -> bool {
    (2..=MAX_REGISTERS).contains(&registers) && lower(p).is_ok()
}
