//! The target register machine, the reference interpreter, and the checks
//! that relate them.

pub mod belady;
mod equiv;
mod inst;
mod interp;
mod sim;

pub use equiv::{cosimulate, equivalent, seed_heap, CosimError, Divergence, Verdict};
pub use inst::{AsmError, Inst, JumpTarget, Label, RegOrImm, TargetProgram};
pub use interp::{run_uil, run_uil_with, Event};
pub use sim::{run_target, run_target_with, ExecError, FaultKind, MachineState, Observation, Run, Traffic, TrafficStats, DEFAULT_FUEL};
