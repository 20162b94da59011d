//! Reference interpreter for source programs.
//!
//! Environment-based and iterative: each activation is an explicit frame,
//! and tail calls replace the current frame, so deep recursion costs heap,
//! not native stack.

use std::collections::BTreeMap;

use super::sim::{ExecError, FaultKind, Observation};
use crate::analysis::{annotate, AnnotatedProc, AnnotatedProgram, AnnotatedStatement, Node, ProgramPoint};
use crate::uil::{Ident, Operand, Program, Rhs, Statement};

/// The environment right after a non-tail statement completes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub proc: Option<Ident>,
    pub point: ProgramPoint,
    pub env: BTreeMap<Ident, i64>,
}

enum Cont<'p> {
    Block {
        stmts: &'p [AnnotatedStatement],
        next: usize,
    },
    /// A non-tail `if` completes when control falls out of its branch.
    Join(ProgramPoint),
}

struct Frame<'p> {
    proc: &'p AnnotatedProc,
    env: BTreeMap<Ident, i64>,
    conts: Vec<Cont<'p>>,
    /// Set while a non-tail call made by this frame is in progress.
    awaiting: Option<(Option<&'p Ident>, ProgramPoint)>,
}

struct Interp<'p, 'h> {
    prog: &'p AnnotatedProgram,
    heap: Vec<i64>,
    writes: Vec<(i64, i64)>,
    on_event: Option<&'h mut dyn FnMut(&Event)>,
}

impl<'p, 'h> Interp<'p, 'h> {
    fn fault(&self, kind: FaultKind) -> ExecError {
        ExecError { kind, writes: self.writes.clone() }
    }

    fn value(&self, env: &BTreeMap<Ident, i64>, o: &Operand) -> Result<i64, ExecError> {
        match o {
            Operand::Imm(n) => Ok(*n),
            Operand::Var(v) => env.get(v).copied().ok_or_else(|| self.fault(FaultKind::UnboundVariable(v.to_string()))),
        }
    }

    fn address(&self, base: i64, index: i64) -> Result<usize, ExecError> {
        let a = base.wrapping_add(index);
        if a >= 0 && (a as u64) < self.heap.len() as u64 {
            Ok(a as usize)
        } else {
            Err(self.fault(FaultKind::HeapOutOfBounds(a)))
        }
    }

    fn event(&mut self, f: &Frame<'p>, point: ProgramPoint) {
        if let Some(hook) = self.on_event.as_mut() {
            hook(&Event { proc: f.proc.name.clone(), point, env: f.env.clone() });
        }
    }

    fn enter(&self, callee: &Ident, args: &[Operand], caller_env: &BTreeMap<Ident, i64>) -> Result<Frame<'p>, ExecError> {
        let proc = self.prog.definition(callee).ok_or_else(|| self.fault(FaultKind::UndefinedProcedure(callee.to_string())))?;
        if proc.params.len() != args.len() {
            return Err(self.fault(FaultKind::UndefinedProcedure(format!("{callee}/{}", args.len()))));
        }
        let mut env = BTreeMap::new();
        for (p, a) in proc.params.iter().zip(args) {
            env.insert(p.clone(), self.value(caller_env, a)?);
        }
        Ok(Frame { proc, env, conts: vec![Cont::Block { stmts: &proc.body.stmts, next: 0 }], awaiting: None })
    }

    fn run(mut self, fuel: u64) -> Result<Observation, ExecError> {
        let entry = &self.prog.entry;
        let mut stack = vec![Frame {
            proc: entry,
            env: BTreeMap::new(),
            conts: vec![Cont::Block { stmts: &entry.body.stmts, next: 0 }],
            awaiting: None,
        }];
        let mut steps = 0u64;
        loop {
            let frame = stack.last_mut().expect("returning from the entry frame ends the run");
            let s = match frame.conts.last_mut() {
                Some(Cont::Block { stmts, next }) => match stmts.get(*next) {
                    Some(s) => {
                        *next += 1;
                        s
                    }
                    None => {
                        frame.conts.pop();
                        continue;
                    }
                },
                Some(Cont::Join(p)) => {
                    let p = *p;
                    frame.conts.pop();
                    let f = stack.pop().expect("nonempty");
                    self.event(&f, p);
                    stack.push(f);
                    continue;
                }
                None => return Err(self.fault(FaultKind::FellOffEnd)),
            };
            if steps >= fuel {
                return Err(self.fault(FaultKind::OutOfFuel));
            }
            steps += 1;
            let mut f = stack.pop().expect("nonempty");
            match &s.node {
                Node::If { test, then_branch, else_branch } => {
                    let (a, b) = (self.value(&f.env, &test.a)?, self.value(&f.env, &test.b)?);
                    if !s.tail {
                        f.conts.push(Cont::Join(s.point));
                    }
                    let arm = if test.rel.holds(a, b) { then_branch } else { else_branch };
                    f.conts.push(Cont::Block { stmts: &arm.stmts, next: 0 });
                    stack.push(f);
                }
                Node::Leaf(Statement::Assign { dst, rhs }) => {
                    let v = match rhs {
                        Rhs::Operand(o) => self.value(&f.env, o)?,
                        Rhs::BinOp(op, a, b) => op.apply(self.value(&f.env, a)?, self.value(&f.env, b)?),
                        Rhs::MemRead { base, index } => {
                            let i = self.address(self.value(&f.env, base)?, self.value(&f.env, index)?)?;
                            self.heap[i]
                        }
                        Rhs::Call { callee, args } => {
                            let callee_frame = self.enter(callee, args, &f.env)?;
                            f.awaiting = Some((Some(dst), s.point));
                            stack.push(f);
                            stack.push(callee_frame);
                            continue;
                        }
                    };
                    f.env.insert(dst.clone(), v);
                    self.event(&f, s.point);
                    stack.push(f);
                }
                Node::Leaf(Statement::MemWrite { base, index, src }) => {
                    let i = self.address(self.value(&f.env, base)?, self.value(&f.env, index)?)?;
                    let v = self.value(&f.env, src)?;
                    self.heap[i] = v;
                    self.writes.push((i as i64, v));
                    self.event(&f, s.point);
                    stack.push(f);
                }
                Node::Leaf(Statement::Call { callee, args }) => {
                    let callee_frame = self.enter(callee, args, &f.env)?;
                    if !s.tail {
                        f.awaiting = Some((None, s.point));
                        stack.push(f);
                    }
                    stack.push(callee_frame);
                }
                Node::Leaf(Statement::Return(v)) => {
                    let v = self.value(&f.env, v)?;
                    let Some(mut caller) = stack.pop() else {
                        return Ok(Observation { ret: v, writes: self.writes });
                    };
                    let (dst, point) = caller.awaiting.take().expect("caller frames await a result");
                    if let Some(d) = dst {
                        caller.env.insert(d.clone(), v);
                    }
                    self.event(&caller, point);
                    stack.push(caller);
                }
                Node::Leaf(Statement::If { .. }) => unreachable!("annotated as Node::If"),
            }
        }
    }
}

/// Run `p` to completion on a copy of `heap_init`.
pub fn run_uil(p: &Program, heap_init: &[i64], fuel: u64) -> Result<Observation, ExecError> {
    let prog = annotate(p);
    Interp { prog: &prog, heap: heap_init.to_vec(), writes: Vec::new(), on_event: None }.run(fuel)
}

/// As [`run_uil`], reporting the environment after every non-tail
/// statement.
pub fn run_uil_with(
    p: &AnnotatedProgram,
    heap_init: &[i64],
    fuel: u64,
    on_event: &mut dyn FnMut(&Event),
) -> Result<Observation, ExecError> {
    Interp { prog: p, heap: heap_init.to_vec(), writes: Vec::new(), on_event: Some(on_event) }.run(fuel)
}
