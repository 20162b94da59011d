//! Primitive model transformers: save, load, and victim selection.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::AllocError;
use crate::analysis::{NextUse, NextUseTable, ProgramPoint};
use crate::machine::Inst;
use crate::model::{MachineConfig, Model, ModelError, Reg, Var};

/// Eviction policy used when a register must be freed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Evict the variable whose next use is furthest away.
    Furthest,
    /// Evict the most recently register-bound variable.
    Lifo,
    /// Evict the least recently register-bound variable.
    Fifo,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Furthest, Policy::Lifo, Policy::Fifo];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Furthest => "furthest",
            Policy::Lifo => "lifo",
            Policy::Fifo => "fifo",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Policy::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown policy `{s}` (expected furthest, lifo, or fifo)"))
    }
}

/// Choose which register-resident variable outside `protected` to evict.
pub fn pick_victim(m: &Model, protected: &BTreeSet<Var>, t: &NextUseTable, p: ProgramPoint, pol: Policy) -> Result<Var, AllocError> {
    let candidates = m.register_bindings().filter(|(v, _)| !protected.contains(*v));
    let best = match pol {
        // Ties go to the lowest register: compare on (next use, reversed reg).
        Policy::Furthest => candidates.max_by_key(|(v, r)| (next_use_rank(t, p, v), std::cmp::Reverse(*r))),
        Policy::Lifo => candidates.max_by_key(|(v, _)| m.stamp_of(v)),
        Policy::Fifo => candidates.min_by_key(|(v, _)| m.stamp_of(v)),
    };
    best.map(|(v, _)| v.clone()).ok_or(AllocError::NoVictim { protected: protected.len() })
}

fn next_use_rank(t: &NextUseTable, p: ProgramPoint, v: &Var) -> NextUse {
    match v {
        // Operand temporaries are consumed by the statement that made them.
        Var::Temp(_) => NextUse::At(p),
        _ => t.next_use(p, v),
    }
}

/// Give every variable in `vs` a home on the stack. Variables already
/// slot-bound cost nothing; others are stored to the lowest free slot and
/// keep their register binding.
pub fn save(m: &Model, vs: &[Var]) -> Result<(Model, Vec<Inst>), AllocError> {
    let mut m = m.clone();
    let mut out = Vec::new();
    for v in vs {
        if m.slot_of(v).is_some() {
            continue;
        }
        let r = m.reg_of(v).ok_or_else(|| ModelError::Unbound(v.clone()))?;
        let s = m.free_slot();
        out.push(Inst::Store { slot: s, src: r });
        m = m.bind_slot(v.clone(), s)?;
    }
    Ok((m, out))
}

/// Context for operations that may have to evict.
#[derive(Clone, Copy)]
pub struct Pressure<'a> {
    pub cfg: &'a MachineConfig,
    pub table: &'a NextUseTable,
    pub point: ProgramPoint,
    pub policy: Policy,
    /// Soft register preferences, consulted before first-fit.
    pub prefer: Option<&'a Model>,
}

/// Find a register for `v`: a preferred or lowest free one, else the home
/// of a victim, which is saved first and loses its register binding.
pub fn acquire(m: &Model, v: &Var, protected: &BTreeSet<Var>, ctx: Pressure<'_>) -> Result<(Model, Reg, Vec<Inst>), AllocError> {
    let none = BTreeSet::new();
    let preferred =
        ctx.prefer.and_then(|pm| pm.reg_of(v)).filter(|r| (r.0 as usize) < ctx.cfg.registers && m.occupant_of_reg(*r).is_none());
    if let Some(r) = preferred.or_else(|| m.free_register(ctx.cfg, &none)) {
        return Ok((m.clone(), r, Vec::new()));
    }
    let victim = pick_victim(m, protected, ctx.table, ctx.point, ctx.policy)?;
    let r = m.reg_of(&victim).expect("victims are register-resident");
    let (m, insts) = save(m, std::slice::from_ref(&victim))?;
    Ok((m.unbind_reg(&victim), r, insts))
}

/// Bring every variable in `vs` into a register. Neither `vs` nor
/// `protected` variables are evicted; a loaded variable keeps its slot.
pub fn load(m: &Model, vs: &[Var], protected: &BTreeSet<Var>, ctx: Pressure<'_>) -> Result<(Model, Vec<Inst>), AllocError> {
    let mut keep = protected.clone();
    keep.extend(vs.iter().cloned());
    let mut m = m.clone();
    let mut out = Vec::new();
    for v in vs {
        if m.reg_of(v).is_some() {
            continue;
        }
        let s = m.slot_of(v).ok_or_else(|| ModelError::Unbound(v.clone()))?;
        let (m2, r, insts) = acquire(&m, v, &keep, ctx)?;
        out.extend(insts);
        out.push(Inst::Load { dst: r, slot: s });
        m = m2.bind_reg(v.clone(), r)?;
    }
    Ok((m, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::annotate;
    use crate::model::{Slot, Var};
    use crate::uil::parse;

    fn x() -> Var {
        Var::named("x")
    }
    fn y() -> Var {
        Var::named("y")
    }
    fn z() -> Var {
        Var::named("z")
    }

    #[test]
    fn save_examples() {
        let m = Model::new().bind_reg(x(), Reg(1)).unwrap().bind_slot(x(), Slot(0)).unwrap();
        assert_eq!(save(&m, &[x()]).unwrap(), (m.clone(), vec![]));
        assert_eq!(save(&m, &[]).unwrap(), (m.clone(), vec![]));
        let m = Model::new().bind_reg(x(), Reg(1)).unwrap().bind_reg(y(), Reg(2)).unwrap();
        let (m2, insts) = save(&m, &[x(), y()]).unwrap();
        assert_eq!(m2.to_string(), "{x:r1, y:r2}{x:fv0, y:fv1}");
        assert_eq!(insts, vec![Inst::Store { slot: Slot(0), src: Reg(1) }, Inst::Store { slot: Slot(1), src: Reg(2) }]);
        assert!(save(&m, &[z()]).is_err());
    }

    fn table_for(src: &str) -> NextUseTable {
        annotate(&parse(src).unwrap()).entry.next_use
    }

    #[test]
    fn load_evicts_furthest() {
        // z is read at point 3; y is next read at 4, x at 5
        let t = table_for("(letrec () (set! x 1) (set! y 2) (set! z 3) (mset! z z z) (set! a (+ y 1)) (return x))");
        let cfg = MachineConfig::with_registers(2).unwrap();
        let m = Model::new().bind_reg(x(), Reg(0)).unwrap().bind_reg(y(), Reg(1)).unwrap().bind_slot(z(), Slot(0)).unwrap();
        let ctx = Pressure { cfg: &cfg, table: &t, point: ProgramPoint(3), policy: Policy::Furthest, prefer: None };
        let (m2, insts) = load(&m, &[z()], &BTreeSet::new(), ctx).unwrap();
        assert_eq!(insts, vec![Inst::Store { slot: Slot(1), src: Reg(0) }, Inst::Load { dst: Reg(0), slot: Slot(0) }]);
        assert_eq!(m2.to_string(), "{y:r1, z:r0}{x:fv1, z:fv0}");
        // already resident: nothing to do
        assert_eq!(load(&m2, &[z(), y()], &BTreeSet::new(), ctx).unwrap(), (m2.clone(), vec![]));
        assert_eq!(load(&m2, &[], &BTreeSet::new(), ctx).unwrap().1, vec![]);
        // everything protected
        let all: BTreeSet<Var> = [y()].into();
        let err = load(&m, &[z(), x()], &all, ctx).unwrap_err();
        assert!(matches!(err, AllocError::NoVictim { .. }));
    }

    #[test]
    fn victim_policies() {
        let t = NextUseTable::from_entries(1, [(ProgramPoint(0), x(), ProgramPoint(40)), (ProgramPoint(0), y(), ProgramPoint(12))]);
        let m = Model::new().bind_reg(y(), Reg(2)).unwrap().bind_reg(x(), Reg(3)).unwrap().bind_reg(z(), Reg(1)).unwrap();
        let none = BTreeSet::new();
        let only_xy: BTreeSet<Var> = [z()].into();
        assert_eq!(pick_victim(&m, &only_xy, &t, ProgramPoint(0), Policy::Furthest).unwrap(), x());
        // z is dead (never used): furthest of all
        assert_eq!(pick_victim(&m, &none, &t, ProgramPoint(0), Policy::Furthest).unwrap(), z());
        assert_eq!(pick_victim(&m, &none, &t, ProgramPoint(0), Policy::Lifo).unwrap(), z());
        assert_eq!(pick_victim(&m, &none, &t, ProgramPoint(0), Policy::Fifo).unwrap(), y());
        // tie: lowest register
        let tie = NextUseTable::from_entries(1, [(ProgramPoint(0), x(), ProgramPoint(5)), (ProgramPoint(0), y(), ProgramPoint(5))]);
        assert_eq!(pick_victim(&m, &only_xy, &tie, ProgramPoint(0), Policy::Furthest).unwrap(), y());
        let all: BTreeSet<Var> = [x(), y(), z()].into();
        assert!(pick_victim(&m, &all, &t, ProgramPoint(0), Policy::Lifo).is_err());
    }

    #[test]
    fn policy_names() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("lru".parse::<Policy>().is_err());
    }
}
