//! Differential checks between the reference interpreter and allocated code.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::interp::{run_uil, run_uil_with, Event};
use super::sim::{run_target, run_target_with, ExecError, FaultKind, Observation};
use super::TargetProgram;
use crate::allocator::Allocation;
use crate::analysis::{AnnotatedProgram, ProgramPoint};
use crate::model::{Location, MachineConfig, Var};
use crate::uil::{Ident, Program};

/// Agreement on one heap, or the reason it could not be decided.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Equivalent,
    /// One side ran out of fuel; step budgets are not comparable.
    Inconclusive,
}

/// First heap on which the two runs disagree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub heap: Vec<i64>,
    pub reference: Result<Observation, ExecError>,
    pub target: Result<Observation, ExecError>,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "divergence on heap {:?}", self.heap)?;
        writeln!(f, "  reference: {}", show(&self.reference))?;
        write!(f, "  target:    {}", show(&self.target))
    }
}

fn show(r: &Result<Observation, ExecError>) -> String {
    match r {
        Ok(o) => format!("returned {} after writes {:?}", o.ret, o.writes),
        Err(e) => format!("{} after writes {:?}", e.kind, e.writes),
    }
}

fn out_of_fuel(r: &Result<Observation, ExecError>) -> bool {
    matches!(r, Err(e) if e.kind == FaultKind::OutOfFuel)
}

/// Run `p` and `tp` on a copy of each heap and compare observations. Runs
/// that fault agree only when both report the same out-of-range heap access
/// after the same writes.
pub fn equivalent(
    p: &Program,
    tp: &TargetProgram,
    cfg: &MachineConfig,
    heaps: &[Vec<i64>],
    fuel: u64,
) -> Result<Vec<Verdict>, Box<Divergence>> {
    let mut verdicts = Vec::with_capacity(heaps.len());
    for heap in heaps {
        let reference = run_uil(p, heap, fuel);
        let target = run_target(tp, cfg, heap, fuel).map(|r| r.observation);
        if out_of_fuel(&reference) || out_of_fuel(&target) {
            verdicts.push(Verdict::Inconclusive);
            continue;
        }
        let agree = match (&reference, &target) {
            (Ok(a), Ok(b)) => a == b,
            (Err(a), Err(b)) => matches!(a.kind, FaultKind::HeapOutOfBounds(_)) && a == b,
            _ => false,
        };
        if !agree {
            return Err(Box::new(Divergence { heap: heap.clone(), reference, target }));
        }
        verdicts.push(Verdict::Equivalent);
    }
    Ok(verdicts)
}

/// A deterministic pseudo-random heap of `words` small values.
pub fn seed_heap(seed: u64, words: usize) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..words).map(|_| rng.gen_range(-8..24)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CosimError {
    #[error("reference run failed: {0}")]
    Reference(ExecError),
    #[error("target run failed: {0}")]
    Target(ExecError),
    #[error("checkpoint {index}: reference is at {ref_proc}{ref_point}, target at {tgt_proc}{tgt_point}")]
    OutOfStep { index: usize, ref_proc: String, ref_point: ProgramPoint, tgt_proc: String, tgt_point: ProgramPoint },
    #[error("checkpoint {index} ({proc}{point}): `{var}` should be {expected} but {loc} holds {found:?}")]
    Value { index: usize, proc: String, point: ProgramPoint, var: Ident, loc: Location, expected: i64, found: Option<i64> },
    #[error("the runs passed {reference} and {target} checkpoints")]
    Count { reference: usize, target: usize },
}

fn proc_name(p: &Option<Ident>) -> String {
    p.as_ref().map_or(String::new(), |n| format!("{n}"))
}

/// A machine location's contents at one `mark`.
struct Snapshot {
    mark: u32,
    values: Vec<(Ident, Location, Option<i64>)>,
}

/// Run the instrumented allocation alongside the reference interpreter and
/// check, at every checkpoint, that each source variable the model binds
/// holds the value the interpreter gives it, in every location the model
/// names. Returns the number of checkpoints compared.
pub fn cosimulate(p: &AnnotatedProgram, alloc: &Allocation, cfg: &MachineConfig, heap: &[i64], fuel: u64) -> Result<usize, CosimError> {
    let mut events: Vec<Event> = Vec::new();
    run_uil_with(p, heap, fuel, &mut |e| events.push(e.clone())).map_err(CosimError::Reference)?;
    let mut snaps: Vec<Snapshot> = Vec::new();
    run_target_with(&alloc.program, cfg, heap, fuel, &mut |id, st| {
        let model = &alloc.checkpoints[id as usize].model;
        let mut values = Vec::new();
        for (v, r) in model.register_bindings() {
            if let Var::Id(name) = v {
                values.push((name.clone(), Location::Reg(r), Some(st.reg(r))));
            }
        }
        for (v, s) in model.slot_bindings() {
            if let Var::Id(name) = v {
                values.push((name.clone(), Location::Slot(s), st.slot(s)));
            }
        }
        snaps.push(Snapshot { mark: id, values });
    })
    .map_err(CosimError::Target)?;

    if events.len() != snaps.len() {
        return Err(CosimError::Count { reference: events.len(), target: snaps.len() });
    }
    for (index, (ev, snap)) in events.iter().zip(&snaps).enumerate() {
        let cp = &alloc.checkpoints[snap.mark as usize];
        if cp.proc != ev.proc || cp.point != ev.point {
            return Err(CosimError::OutOfStep {
                index,
                ref_proc: proc_name(&ev.proc),
                ref_point: ev.point,
                tgt_proc: proc_name(&cp.proc),
                tgt_point: cp.point,
            });
        }
        for (var, loc, found) in &snap.values {
            let expected = ev.env.get(var).copied();
            if expected.is_none() || expected != *found {
                return Err(CosimError::Value {
                    index,
                    proc: proc_name(&cp.proc),
                    point: cp.point,
                    var: var.clone(),
                    loc: *loc,
                    expected: expected.unwrap_or_default(),
                    found: *found,
                });
            }
        }
    }
    Ok(events.len())
}
