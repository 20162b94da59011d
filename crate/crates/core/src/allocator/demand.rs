//! Register demand: how many registers a program needs so that the
//! allocator never touches the stack.
//!
//! Liveness is recomputed over the annotated tree. Besides the live set at
//! each statement, the count includes the scratch registers the allocator
//! takes for immediates, for a destination chosen after operands retire,
//! and for breaking move cycles at joins, calls and returns.

use std::collections::BTreeSet;

use crate::analysis::{uses, AnnotatedProc, AnnotatedProgram, AnnotatedStatement, Node};
use crate::model::{MachineConfig, Var};
use crate::uil::{Ident, Operand, Rhs, Statement, Test};

/// Why a program is outside the spill-free guarantee regardless of `R`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ineligible {
    /// Parameters or arguments beyond the argument registers live in slots.
    StackArguments(Ident),
    /// A non-tail call with live values saves them to the frame.
    CallLives(Ident),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemandReport {
    /// Largest number of simultaneously live variables, `RET` included.
    pub max_live: usize,
    /// Registers that guarantee zero loads and stores, if any number does.
    pub demand: Result<usize, Ineligible>,
}

impl DemandReport {
    pub fn spill_free_at(&self, registers: usize) -> bool {
        matches!(self.demand, Ok(d) if d <= registers)
    }
}

type Live = BTreeSet<Var>;

struct Walk<'a> {
    cfg: &'a MachineConfig,
    procs: BTreeSet<Var>,
    proc: &'a AnnotatedProc,
    max_live: usize,
    demand: usize,
    ineligible: Option<Ineligible>,
}

fn distinct_imms<'o>(ops: impl IntoIterator<Item = &'o Operand>) -> usize {
    let mut seen = BTreeSet::new();
    for o in ops {
        if let Operand::Imm(n) = o {
            seen.insert(*n);
        }
    }
    seen.len()
}

/// Registers taken by immediates that cannot ride in an instruction field.
fn temps(rhs: &Rhs) -> usize {
    match rhs {
        Rhs::Operand(_) | Rhs::Call { .. } => 0,
        Rhs::BinOp(_, Operand::Imm(_), Operand::Imm(_)) | Rhs::BinOp(_, Operand::Var(_), _) => 0,
        Rhs::BinOp(op, Operand::Imm(_), Operand::Var(_)) => usize::from(!op.is_commutative()),
        Rhs::MemRead { base, index } => distinct_imms([base, index]),
    }
}

fn test_temps(t: &Test) -> usize {
    usize::from(matches!((&t.a, &t.b), (Operand::Imm(_), Operand::Imm(_))))
}

impl Walk<'_> {
    fn need(&mut self, n: usize) {
        self.demand = self.demand.max(n);
    }

    fn observe(&mut self, live: &Live) {
        self.max_live = self.max_live.max(live.len());
    }

    fn mark(&mut self, why: Ineligible) {
        self.ineligible.get_or_insert(why);
    }

    fn name(&self) -> Ident {
        self.proc.name.clone().unwrap_or_else(|| Ident::new("entry"))
    }

    fn block(&mut self, stmts: &[AnnotatedStatement], mut live: Live) -> Live {
        for s in stmts.iter().rev() {
            live = self.stmt(s, live);
            self.observe(&live);
        }
        live
    }

    fn stmt(&mut self, s: &AnnotatedStatement, live_out: Live) -> Live {
        match &s.node {
            Node::If { test, then_branch, else_branch } => {
                let t = self.block(&then_branch.stmts, live_out.clone());
                let e = self.block(&else_branch.stmts, live_out.clone());
                if !s.tail {
                    self.need(live_out.len() + 1);
                }
                let mut live_in: Live = t.union(&e).cloned().collect();
                live_in.extend(test_reads(test));
                self.need(live_in.len() + test_temps(test));
                live_in
            }
            Node::Leaf(stmt) => {
                let is_proc = !self.proc.is_entry();
                let reads: Live = uses(stmt, s.tail, is_proc).into_iter().filter(|v| !self.procs.contains(v)).collect();
                let dst = stmt.def().map(Var::from);
                let mut live_in = live_out.clone();
                if let Some(d) = &dst {
                    live_in.remove(d);
                }
                live_in.extend(reads);
                let kept = live_in.iter().filter(|v| live_out.contains(v) && Some(*v) != dst.as_ref()).count();
                match stmt {
                    Statement::Assign { rhs: Rhs::Call { args, .. }, .. } | Statement::Call { args, .. } => {
                        if args.len() > self.cfg.arg_regs.len() {
                            self.mark(Ineligible::StackArguments(self.name()));
                        }
                        if s.tail && is_proc {
                            self.need(live_in.len().max(args.len() + 2));
                        } else {
                            if kept > 0 {
                                self.mark(Ineligible::CallLives(self.name()));
                            }
                            self.need(live_in.len().max(args.len() + 1));
                        }
                    }
                    Statement::Assign { rhs, .. } => {
                        self.need(live_in.len() + temps(rhs));
                        self.need(kept + 1);
                    }
                    Statement::MemWrite { base, index, src } => {
                        self.need(live_in.len() + distinct_imms([base, index, src]));
                    }
                    Statement::Return(_) => self.need(if is_proc { live_in.len().max(3) } else { live_in.len() }),
                    Statement::If { .. } => unreachable!("annotated as Node::If"),
                }
                live_in
            }
        }
    }
}

fn test_reads(t: &Test) -> impl Iterator<Item = Var> + '_ {
    [&t.a, &t.b].into_iter().filter_map(Operand::var).map(Var::from)
}

/// Live-variable peak and spill-free register demand of `p` under the
/// calling convention of `cfg`.
pub fn demand(p: &AnnotatedProgram, cfg: &MachineConfig) -> DemandReport {
    let procs: BTreeSet<Var> = p.definitions.iter().filter_map(|d| d.name.as_ref()).map(Var::from).collect();
    let mut max_live = 0;
    let mut need = 0;
    let mut ineligible = None;
    for proc in p.procs() {
        let mut w = Walk { cfg, procs: procs.clone(), proc, max_live: 0, demand: 0, ineligible: None };
        if proc.params.len() > cfg.arg_regs.len() {
            w.mark(Ineligible::StackArguments(w.name()));
        }
        let live = w.block(&proc.body.stmts, Live::new());
        w.observe(&live);
        max_live = max_live.max(w.max_live);
        need = need.max(w.demand);
        if ineligible.is_none() {
            ineligible = w.ineligible;
        }
    }
    DemandReport { max_live, demand: ineligible.map_or(Ok(need), Err) }
}
