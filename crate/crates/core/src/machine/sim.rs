//! Register-machine simulator.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::inst::{Inst, JumpTarget, Label, RegOrImm, TargetProgram};
use crate::model::{MachineConfig, Reg, Slot};

/// Default step budget for both interpreters.
pub const DEFAULT_FUEL: u64 = 1_000_000;

/// What a run makes visible: the returned word and every heap write, in order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Observation {
    pub ret: i64,
    pub writes: Vec<(i64, i64)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Traffic {
    pub loads: u64,
    pub stores: u64,
    pub moves: u64,
    pub instructions: u64,
}

impl Traffic {
    fn count(&mut self, i: &Inst) {
        match i {
            Inst::Load { .. } => self.loads += 1,
            Inst::Store { .. } => self.stores += 1,
            Inst::Move { .. } => self.moves += 1,
            _ => {}
        }
        if !i.is_pseudo() {
            self.instructions += 1;
        }
    }

    /// Register-memory traffic: loads plus stores.
    pub fn memory(&self) -> u64 {
        self.loads + self.stores
    }

    pub fn of(insts: &[Inst]) -> Traffic {
        let mut t = Traffic::default();
        insts.iter().for_each(|i| t.count(i));
        t
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TrafficStats {
    #[serde(rename = "static")]
    pub static_counts: Traffic,
    pub dynamic: Traffic,
}

impl fmt::Display for TrafficStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (s, d) = (self.static_counts, self.dynamic);
        writeln!(f, "static_loads={}", s.loads)?;
        writeln!(f, "static_stores={}", s.stores)?;
        writeln!(f, "static_moves={}", s.moves)?;
        writeln!(f, "static_instructions={}", s.instructions)?;
        writeln!(f, "dynamic_loads={}", d.loads)?;
        writeln!(f, "dynamic_stores={}", d.stores)?;
        writeln!(f, "dynamic_moves={}", d.moves)?;
        write!(f, "dynamic_instructions={}", d.instructions)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FaultKind {
    #[error("out of fuel")]
    OutOfFuel,
    #[error("heap access at {0} is out of range")]
    HeapOutOfBounds(i64),
    #[error("register r{0} does not exist")]
    BadRegister(u16),
    #[error("read of uninitialized frame slot {0}")]
    UninitializedSlot(i64),
    #[error("frame pointer became negative")]
    NegativeFramePointer,
    #[error("indirect jump to {0}, which is not a label")]
    BadReturnAddress(i64),
    #[error("execution ran past the last instruction")]
    FellOffEnd,
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("call to undefined procedure `{0}`")]
    UndefinedProcedure(String),
}

/// A failed run, with the heap writes made before the fault.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} (after {} heap writes)", writes.len())]
pub struct ExecError {
    pub kind: FaultKind,
    pub writes: Vec<(i64, i64)>,
}

/// Machine state visible to instrumentation hooks.
#[derive(Clone, Debug)]
pub struct MachineState {
    pub regs: Vec<i64>,
    pub fp: usize,
    stack: Vec<Option<i64>>,
    pub heap: Vec<i64>,
    pub pc: usize,
}

impl MachineState {
    /// Current contents of `fv_i` in the active frame.
    pub fn slot(&self, s: Slot) -> Option<i64> {
        self.stack.get(self.fp + s.0 as usize).copied().flatten()
    }

    pub fn reg(&self, r: Reg) -> i64 {
        self.regs[r.0 as usize]
    }
}

/// Result of a completed run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Run {
    pub observation: Observation,
    pub stats: TrafficStats,
    /// Non-tail calls that returned during the run.
    pub calls_returned: u64,
    /// Returns whose frame pointer, after the reverse adjustment, differed
    /// from the value at the call.
    pub frame_mismatches: u64,
}

struct Sim<'a> {
    prog: &'a TargetProgram,
    cfg: &'a MachineConfig,
    st: MachineState,
    writes: Vec<(i64, i64)>,
    /// Return label -> frame adjustment undone right after it.
    return_labels: BTreeMap<Label, i64>,
    pending_calls: Vec<(Label, usize)>,
    calls_returned: u64,
    frame_mismatches: u64,
}

impl<'a> Sim<'a> {
    fn fault(&self, kind: FaultKind) -> ExecError {
        ExecError { kind, writes: self.writes.clone() }
    }

    fn reg(&self, r: Reg) -> Result<i64, ExecError> {
        self.st.regs.get(r.0 as usize).copied().ok_or_else(|| self.fault(FaultKind::BadRegister(r.0)))
    }

    fn set(&mut self, r: Reg, v: i64) -> Result<(), ExecError> {
        match self.st.regs.get_mut(r.0 as usize) {
            Some(x) => {
                *x = v;
                Ok(())
            }
            None => Err(self.fault(FaultKind::BadRegister(r.0))),
        }
    }

    fn operand(&self, b: RegOrImm) -> Result<i64, ExecError> {
        match b {
            RegOrImm::Reg(r) => self.reg(r),
            RegOrImm::Imm(n) => Ok(n),
        }
    }

    fn heap_index(&self, base: i64, index: i64) -> Result<usize, ExecError> {
        let a = base.wrapping_add(index);
        if a >= 0 && (a as u64) < self.st.heap.len() as u64 {
            Ok(a as usize)
        } else {
            Err(self.fault(FaultKind::HeapOutOfBounds(a)))
        }
    }

    fn jump(&mut self, l: &Label) {
        self.st.pc = self.prog.label_pc(l).expect("labels are checked at construction");
    }

    fn step(&mut self) -> Result<bool, ExecError> {
        let Some(inst) = self.prog.insts().get(self.st.pc) else {
            return Err(self.fault(FaultKind::FellOffEnd));
        };
        self.st.pc += 1;
        match inst {
            Inst::Move { dst, src } => {
                let v = self.reg(*src)?;
                self.set(*dst, v)?;
            }
            Inst::LoadImm { dst, imm } => self.set(*dst, *imm)?,
            Inst::Load { dst, slot } => {
                let at = self.st.fp + slot.0 as usize;
                let v = self.st.stack.get(at).copied().flatten();
                let v = v.ok_or_else(|| self.fault(FaultKind::UninitializedSlot(slot.0 as i64)))?;
                self.set(*dst, v)?;
            }
            Inst::Store { slot, src } => {
                let v = self.reg(*src)?;
                let at = self.st.fp + slot.0 as usize;
                if self.st.stack.len() <= at {
                    self.st.stack.resize(at + 1, None);
                }
                self.st.stack[at] = Some(v);
            }
            Inst::BinOp { op, dst, a, b } => {
                let v = op.apply(self.reg(*a)?, self.operand(*b)?);
                self.set(*dst, v)?;
            }
            Inst::MemLoad { dst, base, index } => {
                let i = self.heap_index(self.reg(*base)?, self.reg(*index)?)?;
                let v = self.st.heap[i];
                self.set(*dst, v)?;
            }
            Inst::MemStore { base, index, src } => {
                let (b, x) = (self.reg(*base)?, self.reg(*index)?);
                let i = self.heap_index(b, x)?;
                let v = self.reg(*src)?;
                self.st.heap[i] = v;
                self.writes.push((i as i64, v));
            }
            Inst::CondJump { rel, a, b, target } => {
                if rel.holds(self.reg(*a)?, self.operand(*b)?) {
                    self.jump(target);
                }
            }
            Inst::Jump(JumpTarget::Label(l)) => self.jump(l),
            Inst::Jump(JumpTarget::Reg(r)) => {
                let v = self.reg(*r)?;
                let l = usize::try_from(v).ok().and_then(|i| self.prog.labels().get(i));
                match l {
                    Some(l) => {
                        let l = l.clone();
                        self.jump(&l);
                    }
                    None => return Err(self.fault(FaultKind::BadReturnAddress(v))),
                }
            }
            Inst::LoadLabel { dst, label } => {
                let v = self.prog.label_value(label).expect("labels are checked at construction");
                if self.return_labels.contains_key(label) {
                    self.pending_calls.push((label.clone(), self.st.fp));
                }
                self.set(*dst, v)?;
            }
            Inst::LabelDef(l) => {
                if let Some(&undo) = self.return_labels.get(l) {
                    if let Some(pos) = self.pending_calls.iter().rposition(|(p, _)| p == l) {
                        let (_, fp_at_call) = self.pending_calls.remove(pos);
                        self.calls_returned += 1;
                        if self.st.fp as i64 + undo != fp_at_call as i64 {
                            self.frame_mismatches += 1;
                        }
                    }
                }
            }
            Inst::FrameAdjust(d) => {
                let fp = self.st.fp as i64 + d;
                if fp < 0 {
                    return Err(self.fault(FaultKind::NegativeFramePointer));
                }
                self.st.fp = fp as usize;
            }
            Inst::Halt => return Ok(false),
            Inst::Mark(_) => {}
        }
        Ok(true)
    }
}

/// Labels loaded by `la` are return points; the frame adjustment right after
/// one undoes the caller's advance.
fn return_labels(prog: &TargetProgram) -> BTreeMap<Label, i64> {
    let insts = prog.insts();
    let mut out = BTreeMap::new();
    for i in insts {
        if let Inst::LoadLabel { label, .. } = i {
            let pc = prog.label_pc(label).expect("checked");
            let undo = match insts.get(pc + 1) {
                Some(Inst::FrameAdjust(d)) => *d,
                _ => 0,
            };
            out.insert(label.clone(), undo);
        }
    }
    out
}

/// Execute from instruction 0 until `halt` or fuel runs out. `on_mark` sees
/// the machine state at every `mark` instruction.
pub fn run_target_with(
    prog: &TargetProgram,
    cfg: &MachineConfig,
    heap_init: &[i64],
    fuel: u64,
    on_mark: &mut dyn FnMut(u32, &MachineState),
) -> Result<Run, ExecError> {
    let mut sim = Sim {
        prog,
        cfg,
        st: MachineState { regs: vec![0; cfg.registers], fp: 0, stack: Vec::new(), heap: heap_init.to_vec(), pc: 0 },
        writes: Vec::new(),
        return_labels: return_labels(prog),
        pending_calls: Vec::new(),
        calls_returned: 0,
        frame_mismatches: 0,
    };
    let mut dynamic = Traffic::default();
    let mut steps = 0u64;
    loop {
        if steps >= fuel {
            return Err(sim.fault(FaultKind::OutOfFuel));
        }
        steps += 1;
        if let Some(i) = prog.insts().get(sim.st.pc) {
            dynamic.count(i);
            if let Inst::Mark(id) = i {
                on_mark(*id, &sim.st);
            }
        }
        if !sim.step()? {
            break;
        }
    }
    let ret = sim.reg(sim.cfg.ret_val_reg)?;
    Ok(Run {
        observation: Observation { ret, writes: sim.writes },
        stats: TrafficStats { static_counts: Traffic::of(prog.insts()), dynamic },
        calls_returned: sim.calls_returned,
        frame_mismatches: sim.frame_mismatches,
    })
}

pub fn run_target(prog: &TargetProgram, cfg: &MachineConfig, heap_init: &[i64], fuel: u64) -> Result<Run, ExecError> {
    run_target_with(prog, cfg, heap_init, fuel, &mut |_, _| {})
}
