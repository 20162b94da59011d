use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{Ident, Operand, Program, Statement, RESERVED_RET};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagnosticKind {
    UseBeforeDef,
    UnknownProcedure,
    ArityMismatch,
    DuplicateDefinition,
    DuplicateParameter,
    ReservedName,
    NameClash,
    EmptyBody,
    MissingTail,
    ReturnNotInTail,
}

/// A validation finding. `stmt` is the pre-order statement index within the
/// procedure (`proc == None` is the entry body), the same numbering used for
/// program points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub proc: Option<Ident>,
    pub stmt: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.proc {
            Some(p) => write!(f, "in `{p}`, statement {}: {}", self.stmt, self.message),
            None => write!(f, "in entry body, statement {}: {}", self.stmt, self.message),
        }
    }
}

/// Procedure names double as assembly labels, so they may not look like a
/// local label, a register, or a frame slot.
fn is_reserved_label_shape(s: &str) -> bool {
    ["L", "r", "fv"]
        .iter()
        .any(|prefix| s.strip_prefix(prefix).is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit())))
}

struct Checker<'a> {
    arities: BTreeMap<&'a Ident, usize>,
    proc: Option<Ident>,
    next_point: usize,
    out: Vec<Diagnostic>,
}

impl<'a> Checker<'a> {
    fn report(&mut self, stmt: usize, kind: DiagnosticKind, message: String) {
        self.out.push(Diagnostic { proc: self.proc.clone(), stmt, kind, message });
    }

    fn check_name(&mut self, stmt: usize, v: &Ident) {
        if v.as_str() == RESERVED_RET {
            self.report(stmt, DiagnosticKind::ReservedName, format!("`{v}` is reserved for the return address"));
        } else if self.arities.contains_key(v) {
            self.report(stmt, DiagnosticKind::NameClash, format!("variable `{v}` shadows a procedure name"));
        }
    }

    fn read(&mut self, stmt: usize, o: &Operand, defined: &BTreeSet<Ident>) {
        if let Operand::Var(v) = o {
            self.check_name(stmt, v);
            if !defined.contains(v) && v.as_str() != RESERVED_RET && !self.arities.contains_key(v) {
                self.report(stmt, DiagnosticKind::UseBeforeDef, format!("`{v}` may be used before it is assigned"));
            }
        }
    }

    fn call(&mut self, stmt: usize, callee: &Ident, args: &[Operand], defined: &BTreeSet<Ident>) {
        for a in args {
            self.read(stmt, a, defined);
        }
        match self.arities.get(callee) {
            None => self.report(stmt, DiagnosticKind::UnknownProcedure, format!("call to undefined procedure `{callee}`")),
            Some(&n) if n != args.len() => self.report(
                stmt,
                DiagnosticKind::ArityMismatch,
                format!("`{callee}` takes {n} argument(s) but {} were supplied", args.len()),
            ),
            Some(_) => {}
        }
    }

    /// Returns the set of variables definitely assigned after `stmts`.
    fn block(&mut self, stmts: &[Statement], tail: bool, mut defined: BTreeSet<Ident>) -> BTreeSet<Ident> {
        let block_start = self.next_point;
        for (i, s) in stmts.iter().enumerate() {
            let point = self.next_point;
            self.next_point += 1;
            let in_tail = tail && i + 1 == stmts.len();
            for o in s.reads_operands() {
                self.read(point, o, &defined);
            }
            match s {
                Statement::Assign { dst, .. } => {
                    if let Some((callee, args)) = s.callee() {
                        self.call(point, callee, args, &defined);
                    }
                    self.check_name(point, dst);
                    defined.insert(dst.clone());
                }
                Statement::Call { callee, args } => self.call(point, callee, args, &defined),
                Statement::Return(_) => {
                    if !in_tail {
                        self.report(point, DiagnosticKind::ReturnNotInTail, "`return` is only allowed in tail position".into());
                    }
                }
                Statement::If { then_branch, else_branch, .. } => {
                    let t = self.block(then_branch, in_tail, defined.clone());
                    let e = self.block(else_branch, in_tail, defined.clone());
                    defined = t.intersection(&e).cloned().collect();
                }
                Statement::MemWrite { .. } => {}
            }
        }
        if tail {
            match stmts.last() {
                Some(Statement::Return(_)) | Some(Statement::Call { .. }) | Some(Statement::If { .. }) => {}
                Some(_) => self.report(
                    self.next_point - 1,
                    DiagnosticKind::MissingTail,
                    "body must end with `return`, a tail call, or an `if` ending in tail position".into(),
                ),
                None => self.report(block_start, DiagnosticKind::MissingTail, "branch in tail position is empty".into()),
            }
        }
        defined
    }
}

impl Statement {
    /// Operands read directly by this statement, excluding call arguments
    /// (checked separately alongside the callee).
    fn reads_operands(&self) -> Vec<&Operand> {
        use super::Rhs;
        match self {
            Statement::Assign { rhs, .. } => match rhs {
                Rhs::Operand(o) => vec![o],
                Rhs::BinOp(_, a, b) => vec![a, b],
                Rhs::MemRead { base, index } => vec![base, index],
                Rhs::Call { .. } => vec![],
            },
            Statement::MemWrite { base, index, src } => vec![base, index, src],
            Statement::If { test, .. } => vec![&test.a, &test.b],
            Statement::Call { .. } => vec![],
            Statement::Return(v) => vec![v],
        }
    }
}

/// Check every well-formedness invariant of `p`. An empty result means the
/// program can be annotated, allocated, and interpreted without name faults.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut arities = BTreeMap::new();
    let mut out = Vec::new();
    for d in &p.definitions {
        if arities.insert(&d.name, d.params.len()).is_some() {
            out.push(Diagnostic {
                proc: Some(d.name.clone()),
                stmt: 0,
                kind: DiagnosticKind::DuplicateDefinition,
                message: format!("procedure `{}` is defined more than once", d.name),
            });
        }
        if d.name.as_str() == RESERVED_RET || is_reserved_label_shape(d.name.as_str()) {
            out.push(Diagnostic {
                proc: Some(d.name.clone()),
                stmt: 0,
                kind: DiagnosticKind::ReservedName,
                message: format!("`{}` is reserved and cannot name a procedure", d.name),
            });
        }
    }
    let mut checker = Checker { arities, proc: None, next_point: 0, out };
    for d in &p.definitions {
        checker.proc = Some(d.name.clone());
        checker.next_point = 0;
        let mut params = BTreeSet::new();
        for x in &d.params {
            checker.check_name(0, x);
            if !params.insert(x.clone()) {
                checker.report(0, DiagnosticKind::DuplicateParameter, format!("parameter `{x}` appears twice"));
            }
        }
        if d.body.is_empty() {
            checker.report(0, DiagnosticKind::EmptyBody, "procedure body is empty".into());
        } else {
            checker.block(&d.body, true, params);
        }
    }
    checker.proc = None;
    checker.next_point = 0;
    if p.body.is_empty() {
        checker.report(0, DiagnosticKind::EmptyBody, "entry body is empty".into());
    } else {
        checker.block(&p.body, true, BTreeSet::new());
    }
    checker.out
}
