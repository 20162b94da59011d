//! Register allocation as a sequence of machine-model transformers.
//!
//! Each procedure is allocated independently, starting from the model its
//! calling convention dictates. Statements are visited in order; each one
//! turns the incoming model into an outgoing model plus the instructions
//! that make the machine agree with it. Spilling, reloading, and live-range
//! splitting all fall out of the primitive `save`, `load`, and `shuffle`
//! transformers.

mod compound;
pub mod demand;
mod primitives;
pub mod shuffle;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

pub use compound::alloc_stmt;
pub use primitives::{acquire, load, pick_victim, save, Policy, Pressure};
pub use shuffle::{sequentialize, shuffle, MoveMapping, MoveSource, ShuffleError};

use crate::analysis::{annotate, AnnotatedProgram, ProgramPoint};
use crate::machine::{Inst, Label, TargetProgram};
use crate::model::{Location, MachineConfig, Model, ModelError};
use crate::uil::{Ident, Program};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllocConfig {
    pub machine: MachineConfig,
    pub policy: Policy,
    /// Let the else-branch of an `if` steer free-register choices toward
    /// the then-branch's final model, shrinking the merge shuffle.
    pub preferences: bool,
    /// Emit a `mark` after every non-tail statement and record the model
    /// there, for co-simulation against the reference interpreter.
    pub instrument: bool,
}

impl AllocConfig {
    pub fn new(machine: MachineConfig, policy: Policy) -> Self {
        AllocConfig { machine, policy, preferences: true, instrument: false }
    }
}

/// Whether a statement's continuation is the procedure's return.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ctx {
    Tail,
    NonTail,
}

/// Where a statement left its result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Value {
    None,
    Loc(Location),
    Imm(i64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformResult {
    pub insts: Vec<Inst>,
    pub value: Value,
    /// Model after the statement; empty when control leaves the procedure.
    pub model: Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("no register can be freed: every resident variable among {protected} is needed by the current statement")]
    NoVictim { protected: usize },
    #[error("register pressure in {proc}, statement {point} `{stmt}`: operands need more than {registers} registers at once")]
    RegisterPressure { proc: String, point: usize, stmt: String, registers: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shuffle(#[from] ShuffleError),
    #[error("call to undefined procedure `{0}`")]
    UnknownProcedure(Ident),
    #[error("`{callee}` takes {expected} argument(s) but {found} were supplied")]
    Arity { callee: Ident, expected: usize, found: usize },
    #[error("internal allocator error: {0}")]
    Internal(String),
}

/// One step of the allocation, in the model notation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub proc: Option<Ident>,
    pub point: Option<ProgramPoint>,
    /// Statement head, or `join` for a branch merge.
    pub what: String,
    /// Index of the first instruction emitted for this step.
    pub start: usize,
    pub before: Model,
    /// `None` when control leaves the procedure.
    pub after: Option<Model>,
}

impl TraceEntry {
    pub fn render(&self) -> String {
        let after = self.after.as_ref().map_or("(exit)".to_string(), |m| m.to_string());
        format!("{}  {} -> {}", self.what, self.before, after)
    }
}

/// The model recorded at a `mark` instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub proc: Option<Ident>,
    pub point: ProgramPoint,
    pub model: Model,
}

#[derive(Clone, Debug)]
pub struct Allocation {
    pub program: TargetProgram,
    pub trace: Vec<TraceEntry>,
    /// Indexed by `mark` id; empty unless instrumented.
    pub checkpoints: Vec<Checkpoint>,
}

impl Allocation {
    /// Assembly with each step's model transition as a comment above its
    /// first instruction.
    pub fn traced_listing(&self) -> String {
        let mut by_start: BTreeMap<usize, Vec<&TraceEntry>> = BTreeMap::new();
        for e in &self.trace {
            by_start.entry(e.start).or_default().push(e);
        }
        let mut out = String::new();
        let insts = self.program.insts();
        for pc in 0..=insts.len() {
            for e in by_start.get(&pc).into_iter().flatten() {
                let _ = writeln!(out, "  ; {}", e.render());
            }
            match insts.get(pc) {
                Some(i @ Inst::LabelDef(_)) => {
                    let _ = writeln!(out, "{i}");
                }
                Some(i) => {
                    let _ = writeln!(out, "  {i}");
                }
                None => {}
            }
        }
        out
    }
}

/// Instructions plus the trace entries that point into them.
#[derive(Default)]
pub(crate) struct Code {
    pub insts: Vec<Inst>,
    pub trace: Vec<TraceEntry>,
}

impl Code {
    pub fn push(&mut self, i: Inst) {
        self.insts.push(i);
    }

    pub fn extend(&mut self, is: impl IntoIterator<Item = Inst>) {
        self.insts.extend(is);
    }

    pub fn append(&mut self, other: Code) {
        let base = self.insts.len();
        self.insts.extend(other.insts);
        self.trace.extend(other.trace.into_iter().map(|mut e| {
            e.start += base;
            e
        }));
    }
}

/// Shared state across the procedures of one program.
pub(crate) struct ProgramState {
    pub arities: BTreeMap<Ident, usize>,
    pub next_label: u32,
    pub checkpoints: Vec<Checkpoint>,
}

impl ProgramState {
    pub fn fresh_label(&mut self) -> Label {
        self.next_label += 1;
        Label::Local(self.next_label - 1)
    }
}

/// Allocate every procedure and the entry body. The entry body comes first,
/// so execution starts there; each procedure follows under its own label.
pub fn alloc_program(p: &AnnotatedProgram, cfg: &AllocConfig) -> Result<Allocation, AllocError> {
    let arities = p.definitions.iter().filter_map(|d| d.name.clone().map(|n| (n, d.params.len()))).collect();
    let mut st = ProgramState { arities, next_label: 0, checkpoints: Vec::new() };
    let mut code = Code::default();
    for proc in p.procs() {
        if let Some(name) = &proc.name {
            code.push(Inst::LabelDef(Label::Proc(name.clone())));
        }
        let m0 = match proc.name {
            None => Model::new(),
            Some(_) => Model::initial(&proc.params, &cfg.machine),
        };
        let mut pa = compound::ProcAlloc::new(cfg, proc, &mut st);
        let mut body = Code::default();
        if pa.block(&proc.body, m0, &mut body)?.is_some() {
            return Err(AllocError::Internal("procedure body does not end in tail position".into()));
        }
        code.append(body);
    }
    let program = TargetProgram::new(code.insts).map_err(|e| AllocError::Internal(e.to_string()))?;
    Ok(Allocation { program, trace: code.trace, checkpoints: st.checkpoints })
}

/// Annotate and allocate. `p` should already pass validation.
pub fn compile(p: &Program, cfg: &AllocConfig) -> Result<Allocation, AllocError> {
    alloc_program(&annotate(p), cfg)
}
