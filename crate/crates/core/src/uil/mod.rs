//! The input language: a first-order `letrec` of procedures over flat
//! statements, with no nested expressions.
//!
//! The concrete syntax is parenthesized prefix form:
//!
//! ```text
//! (letrec ((f (lambda (a b) (set! c (+ a b)) (return c))))
//!   (set! x 0)
//!   (f x 1))
//! ```

mod parse;
mod print;
mod validate;

use std::fmt;
use std::sync::Arc;

pub use parse::{parse, ParseError};
pub use validate::{validate, Diagnostic, DiagnosticKind};

/// A source-level name. Cheap to clone.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ident(Arc<str>);

impl Ident {
    pub fn new(s: &str) -> Self {
        Ident(Arc::from(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Ident {
    fn from(s: &str) -> Self {
        Ident::new(s)
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Name reserved for the return address; never a valid source identifier.
pub const RESERVED_RET: &str = "RET";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operand {
    Var(Ident),
    Imm(i64),
}

impl Operand {
    pub fn var(&self) -> Option<&Ident> {
        match self {
            Operand::Var(v) => Some(v),
            Operand::Imm(_) => None,
        }
    }
}

impl From<&str> for Operand {
    fn from(s: &str) -> Self {
        Operand::Var(Ident::new(s))
    }
}

impl From<i64> for Operand {
    fn from(n: i64) -> Self {
        Operand::Imm(n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

impl BinOp {
    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
        }
    }

    pub fn is_commutative(self) -> bool {
        !matches!(self, BinOp::Sub)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl Relation {
    pub fn holds(self, a: i64, b: i64) -> bool {
        match self {
            Relation::Lt => a < b,
            Relation::Le => a <= b,
            Relation::Eq => a == b,
            Relation::Ge => a >= b,
            Relation::Gt => a > b,
        }
    }

    /// The relation with its operands exchanged: `a < b` iff `b > a`.
    pub fn flipped(self) -> Relation {
        match self {
            Relation::Lt => Relation::Gt,
            Relation::Le => Relation::Ge,
            Relation::Eq => Relation::Eq,
            Relation::Ge => Relation::Le,
            Relation::Gt => Relation::Lt,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
            Relation::Gt => ">",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Test {
    pub rel: Relation,
    pub a: Operand,
    pub b: Operand,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rhs {
    Operand(Operand),
    BinOp(BinOp, Operand, Operand),
    MemRead {
        base: Operand,
        index: Operand,
    },
    /// `(set! x (f a ...))`: a call whose result is bound to the destination.
    Call {
        callee: Ident,
        args: Vec<Operand>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Statement {
    Assign { dst: Ident, rhs: Rhs },
    MemWrite { base: Operand, index: Operand, src: Operand },
    If { test: Test, then_branch: Vec<Statement>, else_branch: Vec<Statement> },
    Call { callee: Ident, args: Vec<Operand> },
    Return(Operand),
}

impl Statement {
    /// Variables read by this statement itself (for `If`, only the test).
    pub fn reads(&self) -> Vec<&Ident> {
        fn push<'a>(out: &mut Vec<&'a Ident>, o: &'a Operand) {
            if let Operand::Var(v) = o {
                out.push(v);
            }
        }
        let mut out = Vec::new();
        match self {
            Statement::Assign { rhs, .. } => match rhs {
                Rhs::Operand(o) => push(&mut out, o),
                Rhs::BinOp(_, a, b) => {
                    push(&mut out, a);
                    push(&mut out, b);
                }
                Rhs::MemRead { base, index } => {
                    push(&mut out, base);
                    push(&mut out, index);
                }
                Rhs::Call { args, .. } => args.iter().for_each(|a| push(&mut out, a)),
            },
            Statement::MemWrite { base, index, src } => {
                push(&mut out, base);
                push(&mut out, index);
                push(&mut out, src);
            }
            Statement::If { test, .. } => {
                push(&mut out, &test.a);
                push(&mut out, &test.b);
            }
            Statement::Call { args, .. } => args.iter().for_each(|a| push(&mut out, a)),
            Statement::Return(v) => push(&mut out, v),
        }
        out
    }

    /// The procedure named by a call, in either call form.
    pub fn callee(&self) -> Option<(&Ident, &[Operand])> {
        match self {
            Statement::Call { callee, args } => Some((callee, args)),
            Statement::Assign { rhs: Rhs::Call { callee, args }, .. } => Some((callee, args)),
            _ => None,
        }
    }

    pub fn def(&self) -> Option<&Ident> {
        match self {
            Statement::Assign { dst, .. } => Some(dst),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Definition {
    pub name: Ident,
    pub params: Vec<Ident>,
    pub body: Vec<Statement>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Program {
    pub definitions: Vec<Definition>,
    pub body: Vec<Statement>,
}

impl Program {
    pub fn definition(&self, name: &Ident) -> Option<&Definition> {
        self.definitions.iter().find(|d| &d.name == name)
    }

    pub fn definition_index(&self, name: &Ident) -> Option<usize> {
        self.definitions.iter().position(|d| &d.name == name)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print::program_to_string(self))
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print::statement_head(self))
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Var(v) => write!(f, "{v}"),
            Operand::Imm(n) => write!(f, "{n}"),
        }
    }
}

/// Whether `stmts` ends in tail position: a return, a call, or an `if` whose
/// branches both end in tail position.
pub fn ends_in_tail(stmts: &[Statement]) -> bool {
    match stmts.last() {
        Some(Statement::Return(_)) | Some(Statement::Call { .. }) => true,
        Some(Statement::If { then_branch, else_branch, .. }) => ends_in_tail(then_branch) && ends_in_tail(else_branch),
        _ => false,
    }
}
