//! Backward liveness: per-statement ending sets and a next-use table.
//!
//! No interference graph is built. Each statement is tagged with the set of
//! names whose live range ends there, and every program point records, for
//! each live variable, the point of its next read. Branches are numbered
//! then-before-else in a single pre-order sweep; the next use across a branch
//! is the minimum over both arms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::model::Var;
use crate::uil::{Ident, Program, Statement, Test};

/// Pre-order index of a statement within one procedure body.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProgramPoint(pub usize);

impl fmt::Display for ProgramPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

/// Next read of a variable's current value. `Never` sorts after every point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NextUse {
    At(ProgramPoint),
    Never,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NextUseTable {
    after: Vec<BTreeMap<Var, ProgramPoint>>,
}

impl NextUseTable {
    /// Build a table from explicit per-point entries; absent pairs are `Never`.
    pub fn from_entries(points: usize, entries: impl IntoIterator<Item = (ProgramPoint, Var, ProgramPoint)>) -> Self {
        let mut after = vec![BTreeMap::new(); points];
        for (p, v, q) in entries {
            after[p.0].insert(v, q);
        }
        NextUseTable { after }
    }

    /// The next point after `p` at which `v` is read on some path, or
    /// `Never` when `v` is dead after `p`. Unknown points and names are dead.
    pub fn next_use(&self, p: ProgramPoint, v: &Var) -> NextUse {
        self.after.get(p.0).and_then(|m| m.get(v)).map_or(NextUse::Never, |&q| NextUse::At(q))
    }

    pub fn live_after(&self, p: ProgramPoint) -> impl Iterator<Item = &Var> {
        self.after.get(p.0).into_iter().flat_map(|m| m.keys())
    }

    pub fn points(&self) -> usize {
        self.after.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    /// Any statement other than `if`.
    Leaf(Statement),
    If {
        test: Test,
        then_branch: Block,
        else_branch: Block,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedStatement {
    pub point: ProgramPoint,
    /// Names whose live range ends at this statement.
    pub ends: BTreeSet<Ident>,
    /// True for the final statement of a procedure (or of a tail branch).
    pub tail: bool,
    pub node: Node,
}

/// A statement list plus the names that are live on entry to the enclosing
/// construct but dead on entry to this block.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Block {
    pub entry_dead: BTreeSet<Ident>,
    pub stmts: Vec<AnnotatedStatement>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedProc {
    /// `None` for the entry body.
    pub name: Option<Ident>,
    pub params: Vec<Ident>,
    pub body: Block,
    pub next_use: NextUseTable,
}

impl AnnotatedProc {
    pub fn is_entry(&self) -> bool {
        self.name.is_none()
    }

    /// Listing with each statement suffixed by `, {ends}`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        dump_block(&mut out, &self.body, 0);
        out
    }

    /// Every annotated statement in pre-order.
    pub fn statements(&self) -> Vec<&AnnotatedStatement> {
        fn walk<'a>(b: &'a Block, out: &mut Vec<&'a AnnotatedStatement>) {
            for s in &b.stmts {
                out.push(s);
                if let Node::If { then_branch, else_branch, .. } = &s.node {
                    walk(then_branch, out);
                    walk(else_branch, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }
}

fn fmt_set(s: &BTreeSet<Ident>) -> String {
    let v: Vec<_> = s.iter().map(|x| x.to_string()).collect();
    format!("{{{}}}", v.join(", "))
}

fn dump_block(out: &mut String, b: &Block, depth: usize) {
    let pad = "  ".repeat(depth);
    for s in &b.stmts {
        match &s.node {
            Node::Leaf(stmt) => out.push_str(&format!("{pad}{stmt}, {}\n", fmt_set(&s.ends))),
            Node::If { test, then_branch, else_branch } => {
                out.push_str(&format!("{pad}(if ({} {} {})), {}\n", test.rel.symbol(), test.a, test.b, fmt_set(&s.ends)));
                for (label, branch) in [("then", then_branch), ("else", else_branch)] {
                    out.push_str(&format!("{pad}  {label}, dead on entry {}\n", fmt_set(&branch.entry_dead)));
                    dump_block(out, branch, depth + 2);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedProgram {
    pub definitions: Vec<AnnotatedProc>,
    pub entry: AnnotatedProc,
}

impl AnnotatedProgram {
    pub fn procs(&self) -> impl Iterator<Item = &AnnotatedProc> {
        std::iter::once(&self.entry).chain(&self.definitions)
    }

    pub fn definition(&self, name: &Ident) -> Option<&AnnotatedProc> {
        self.definitions.iter().find(|d| d.name.as_ref() == Some(name))
    }
}

/// Variables read by a leaf statement, including the callee name of a call
/// and, for tail statements of a procedure, the return address.
pub fn uses(stmt: &Statement, tail: bool, has_ret: bool) -> BTreeSet<Var> {
    let mut u: BTreeSet<Var> = stmt.reads().into_iter().map(Var::from).collect();
    if let Some((callee, _)) = stmt.callee() {
        u.insert(Var::from(callee));
    }
    let is_tail_stmt = tail && matches!(stmt, Statement::Return(_) | Statement::Call { .. });
    if has_ret && is_tail_stmt {
        u.insert(Var::Ret);
    }
    u
}

struct Backward<'a> {
    has_ret: bool,
    after: &'a mut Vec<BTreeMap<Var, ProgramPoint>>,
    next_point: usize,
}

type Live = BTreeSet<Var>;
type NextUses = BTreeMap<Var, ProgramPoint>;

fn idents(vs: impl IntoIterator<Item = Var>) -> BTreeSet<Ident> {
    vs.into_iter()
        .filter_map(|v| match v {
            Var::Id(i) => Some(i),
            _ => None,
        })
        .collect()
}

/// A statement with its pre-order point assigned but liveness pending.
struct Numbered<'s> {
    point: ProgramPoint,
    stmt: &'s Statement,
    tail: bool,
    branches: Option<(Vec<Numbered<'s>>, Vec<Numbered<'s>>)>,
}

impl<'a> Backward<'a> {
    fn number<'s>(&mut self, stmts: &'s [Statement], tail: bool) -> Vec<Numbered<'s>> {
        let mut out = Vec::with_capacity(stmts.len());
        for (i, stmt) in stmts.iter().enumerate() {
            let point = ProgramPoint(self.next_point);
            self.next_point += 1;
            let tail = tail && i + 1 == stmts.len();
            let branches = match stmt {
                Statement::If { then_branch, else_branch, .. } => {
                    let t = self.number(then_branch, tail);
                    let e = self.number(else_branch, tail);
                    Some((t, e))
                }
                _ => None,
            };
            out.push(Numbered { point, stmt, tail, branches });
        }
        out
    }

    /// Returns the annotated block plus liveness and next uses at its entry.
    fn block(&mut self, stmts: Vec<Numbered<'_>>, mut live: Live, mut nu: NextUses) -> (Vec<AnnotatedStatement>, Live, NextUses) {
        let mut out = Vec::with_capacity(stmts.len());
        for n in stmts.into_iter().rev() {
            let (node, reads, live_after_reads, nu_after_reads) = match n.branches {
                None => {
                    let reads = uses(n.stmt, n.tail, self.has_ret);
                    let mut l = live.clone();
                    let mut u = nu.clone();
                    if let Some(d) = n.stmt.def() {
                        l.remove(&Var::from(d));
                        u.remove(&Var::from(d));
                    }
                    self.after[n.point.0] = nu.clone();
                    (Node::Leaf(n.stmt.clone()), reads, l, u)
                }
                Some((t, e)) => {
                    let (t_stmts, t_live, t_nu) = self.block(t, live.clone(), nu.clone());
                    let (e_stmts, e_live, e_nu) = self.block(e, live.clone(), nu.clone());
                    let joined: Live = t_live.union(&e_live).cloned().collect();
                    let mut min_nu = t_nu.clone();
                    for (v, q) in e_nu {
                        min_nu.entry(v).and_modify(|p| *p = (*p).min(q)).or_insert(q);
                    }
                    self.after[n.point.0] = min_nu.clone();
                    let then_branch = Block { entry_dead: idents(joined.difference(&t_live).cloned()), stmts: t_stmts };
                    let else_branch = Block { entry_dead: idents(joined.difference(&e_live).cloned()), stmts: e_stmts };
                    let test = match n.stmt {
                        Statement::If { test, .. } => test.clone(),
                        _ => unreachable!("branches only on if"),
                    };
                    let reads = n.stmt.reads().into_iter().map(Var::from).collect();
                    // The test reads happen before either arm; what is live
                    // "after" the test is the union of both arms' entry sets.
                    live = joined;
                    (Node::If { test, then_branch, else_branch }, reads, live.clone(), min_nu)
                }
            };
            let mut live_in = live_after_reads;
            live_in.extend(reads.iter().cloned());
            let ends = idents(live_in.difference(&live).cloned());
            let mut nu_in = nu_after_reads;
            for v in reads {
                nu_in.insert(v, n.point);
            }
            out.push(AnnotatedStatement { point: n.point, ends, tail: n.tail, node });
            live = live_in;
            nu = nu_in;
        }
        out.reverse();
        (out, live, nu)
    }
}

fn annotate_proc(name: Option<Ident>, params: &[Ident], body: &[Statement]) -> AnnotatedProc {
    let has_ret = name.is_some();
    let mut after = Vec::new();
    let mut pass = Backward { has_ret, after: &mut after, next_point: 0 };
    let numbered = pass.number(body, true);
    pass.after.resize(pass.next_point, BTreeMap::new());
    let (stmts, live_in, _) = pass.block(numbered, Live::new(), NextUses::new());
    let entry_dead = params.iter().filter(|p| !live_in.contains(&Var::from(*p))).cloned().collect();
    AnnotatedProc { name, params: params.to_vec(), body: Block { entry_dead, stmts }, next_use: NextUseTable { after } }
}

/// Run the backward pass over every procedure and the entry body.
pub fn annotate(p: &Program) -> AnnotatedProgram {
    AnnotatedProgram {
        definitions: p.definitions.iter().map(|d| annotate_proc(Some(d.name.clone()), &d.params, &d.body)).collect(),
        entry: annotate_proc(None, &[], &p.body),
    }
}
