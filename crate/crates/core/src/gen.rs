//! Random valid programs for differential testing and policy comparison.
//!
//! Programs always terminate: a procedure only calls procedures defined
//! after it, so there is no recursion. Heap accesses stay inside a heap of
//! [`GenConfig::heap_words`] words; the generator tracks an interval for
//! every variable and only uses a variable in an address when its interval
//! keeps `base + index` in range.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::uil::{BinOp, Definition, Ident, Operand, Program, Relation, Rhs, Statement, Test};

/// Values the heap can hold: initial contents come from
/// [`crate::machine::seed_heap`] and stores are restricted to this range.
const HEAP_VALUES: Interval = Interval { lo: -8, hi: 63 };
const VAR_NAMES: [&str; 10] = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];
const PROC_NAMES: [&str; 3] = ["p", "q", "s"];
const LIMIT: i64 = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    /// Procedures, calls, and nested conditionals.
    General,
    /// A single entry body of assignments and heap accesses.
    StraightLine,
    /// Straight-line code that keeps rereading the value defined just
    /// before the latest one, the reuse pattern last-in-first-out eviction
    /// handles worst.
    LifoAdversarial,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenConfig {
    pub shape: Shape,
    /// Procedure definitions, not counting the entry body.
    pub max_procs: usize,
    /// Statements in the whole program, nested ones included.
    pub max_stmts: usize,
    pub max_vars: usize,
    pub max_if_depth: usize,
    pub max_params: usize,
    pub heap_words: usize,
    /// Aim for about this many simultaneously live variables, give or take two.
    pub pressure: Option<usize>,
    /// No statement needs more registers than this at once.
    pub min_registers: usize,
}

impl GenConfig {
    pub fn general() -> Self {
        GenConfig {
            shape: Shape::General,
            max_procs: 3,
            max_stmts: 30,
            max_vars: 10,
            max_if_depth: 2,
            max_params: 4,
            heap_words: 64,
            pressure: None,
            min_registers: 3,
        }
    }

    /// Programs the exhaustive oracle accepts at two or three registers.
    pub fn straight_line() -> Self {
        GenConfig {
            shape: Shape::StraightLine,
            max_procs: 0,
            max_stmts: 10,
            max_vars: 6,
            max_if_depth: 0,
            max_params: 0,
            min_registers: 2,
            ..GenConfig::general()
        }
    }

    pub fn lifo_adversarial() -> Self {
        GenConfig { shape: Shape::LifoAdversarial, ..GenConfig::straight_line() }
    }

    pub fn with_pressure(mut self, registers: usize) -> Self {
        self.pressure = Some(registers);
        self
    }
}

/// Inclusive range of values a variable may hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Interval {
    lo: i64,
    hi: i64,
}

impl Interval {
    fn point(n: i64) -> Self {
        Interval { lo: n, hi: n }
    }

    fn within(self, outer: Interval) -> bool {
        outer.lo <= self.lo && self.hi <= outer.hi
    }

    fn hull(self, o: Interval) -> Interval {
        Interval { lo: self.lo.min(o.lo), hi: self.hi.max(o.hi) }
    }

    fn bounded(lo: i64, hi: i64) -> Option<Interval> {
        (lo > -LIMIT && hi < LIMIT).then_some(Interval { lo, hi })
    }

    fn apply(op: BinOp, a: Option<Interval>, b: Option<Interval>) -> Option<Interval> {
        let (a, b) = (a?, b?);
        match op {
            BinOp::Add => Interval::bounded(a.lo + b.lo, a.hi + b.hi),
            BinOp::Sub => Interval::bounded(a.lo - b.hi, a.hi - b.lo),
            BinOp::Mul => {
                let ps = [a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi];
                Interval::bounded(*ps.iter().min()?, *ps.iter().max()?)
            }
        }
    }
}

/// Variables defined on every path to the current point, most recent last,
/// with what is known about their values.
#[derive(Clone, Debug, Default)]
struct Scope {
    defined: Vec<Ident>,
    ranges: BTreeMap<Ident, Option<Interval>>,
}

impl Scope {
    fn define(&mut self, x: &Ident, range: Option<Interval>) {
        self.defined.retain(|v| v != x);
        self.defined.push(x.clone());
        self.ranges.insert(x.clone(), range);
    }

    fn range(&self, o: &Operand) -> Option<Interval> {
        match o {
            Operand::Imm(n) => Some(Interval::point(*n)),
            Operand::Var(v) => self.ranges.get(v).copied().flatten(),
        }
    }

    /// Keep what both branches define, in this scope's order.
    fn join(&self, a: &Scope, b: &Scope) -> Scope {
        let mut out = Scope::default();
        let mut order: Vec<&Ident> = self.defined.iter().collect();
        for v in a.defined.iter().chain(&b.defined) {
            if !order.contains(&v) {
                order.push(v);
            }
        }
        for v in order {
            if let (Some(ra), Some(rb)) = (a.ranges.get(v), b.ranges.get(v)) {
                let r = match (ra, rb) {
                    (Some(x), Some(y)) => Some(x.hull(*y)),
                    _ => None,
                };
                out.define(v, r);
            }
        }
        out
    }
}

struct Gen<'c> {
    cfg: &'c GenConfig,
    rng: ChaCha8Rng,
    budget: usize,
    /// Procedures callable from the one being generated, with arities.
    callees: Vec<(Ident, usize)>,
    names: Vec<Ident>,
    target_live: usize,
}

impl Gen<'_> {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn imm(&mut self) -> i64 {
        self.rng.gen_range(-4..16)
    }

    fn pick_var(&mut self, sc: &Scope) -> Option<Ident> {
        let n = sc.defined.len();
        if n == 0 {
            return None;
        }
        let adversarial = self.cfg.shape == Shape::LifoAdversarial && n >= 2;
        let i = if adversarial && self.chance(0.7) {
            n - 2
        } else if self.chance(0.4) {
            // older variables stay live longer, which keeps pressure up
            self.rng.gen_range(0..n.div_ceil(2))
        } else {
            self.rng.gen_range(0..n)
        };
        Some(sc.defined[i].clone())
    }

    fn operand(&mut self, sc: &Scope) -> Operand {
        if self.chance(0.8) {
            if let Some(v) = self.pick_var(sc) {
                return Operand::Var(v);
            }
        }
        Operand::Imm(self.imm())
    }

    fn var_operand(&mut self, sc: &Scope) -> Operand {
        match self.pick_var(sc) {
            Some(v) => Operand::Var(v),
            None => Operand::Imm(self.imm()),
        }
    }

    fn dst(&mut self, sc: &Scope) -> Ident {
        let fresh: Vec<Ident> = self.names.iter().filter(|n| !sc.defined.contains(n)).cloned().collect();
        let want_new = sc.defined.len() < self.target_live || sc.defined.is_empty();
        if !fresh.is_empty() && (want_new || self.chance(0.15)) {
            return fresh.choose(&mut self.rng).expect("nonempty").clone();
        }
        if sc.defined.is_empty() {
            return self.names[0].clone();
        }
        // overwrite a recent variable so older ones keep their values live
        let n = sc.defined.len();
        let lo = n.saturating_sub(3);
        sc.defined[self.rng.gen_range(lo..n)].clone()
    }

    /// Operands `(base, index)` whose sum is a valid heap address.
    fn address(&mut self, sc: &Scope) -> (Operand, Operand) {
        let words = self.cfg.heap_words as i64;
        let heap = Interval { lo: 0, hi: words - 1 };
        let usable: Vec<(Ident, Interval)> = sc
            .defined
            .iter()
            .filter_map(|v| sc.ranges.get(v).copied().flatten().map(|r| (v.clone(), r)))
            .filter(|(_, r)| r.hi - r.lo < words)
            .collect();
        if let Some((v, r)) = usable.choose(&mut self.rng).cloned() {
            if self.chance(0.85) {
                let k = self.rng.gen_range(-r.lo..=words - 1 - r.hi);
                return if self.chance(0.5) { (Operand::Var(v), Operand::Imm(k)) } else { (Operand::Imm(k), Operand::Var(v)) };
            }
            if let Some((w, s)) = usable.choose(&mut self.rng).cloned() {
                let sum = Interval { lo: r.lo + s.lo, hi: r.hi + s.hi };
                if sum.within(heap) {
                    return (Operand::Var(v), Operand::Var(w));
                }
            }
        }
        let a = self.rng.gen_range(0..words);
        let b = self.rng.gen_range(-a..words - a);
        (Operand::Imm(a), Operand::Imm(b))
    }

    fn registers_needed(ops: &[&Operand]) -> usize {
        let mut seen: Vec<&Operand> = Vec::new();
        for o in ops {
            if !seen.contains(o) {
                seen.push(o);
            }
        }
        seen.len()
    }

    fn mem_write(&mut self, sc: &Scope) -> Statement {
        let (mut base, mut index) = self.address(sc);
        let candidates: Vec<Ident> =
            sc.defined.iter().filter(|v| sc.ranges.get(*v).copied().flatten().is_some_and(|r| r.within(HEAP_VALUES))).cloned().collect();
        let src = match candidates.choose(&mut self.rng) {
            Some(v) if self.chance(0.8) => Operand::Var(v.clone()),
            _ => Operand::Imm(self.rng.gen_range(HEAP_VALUES.lo..=HEAP_VALUES.hi)),
        };
        if Self::registers_needed(&[&base, &index, &src]) > self.cfg.min_registers {
            let k = self.rng.gen_range(0..self.cfg.heap_words as i64 / 2);
            base = Operand::Imm(k);
            index = Operand::Imm(k);
        }
        Statement::MemWrite { base, index, src }
    }

    fn assign(&mut self, sc: &mut Scope) -> Statement {
        let roll = self.rng.gen_range(0..10);
        let rhs = if sc.defined.is_empty() || roll == 0 {
            Rhs::Operand(Operand::Imm(self.imm()))
        } else if roll <= 5 {
            let op = *[BinOp::Add, BinOp::Add, BinOp::Sub, BinOp::Mul].choose(&mut self.rng).expect("nonempty");
            let a = self.var_operand(sc);
            let b = self.operand(sc);
            if self.chance(0.2) {
                Rhs::BinOp(op, b, a)
            } else {
                Rhs::BinOp(op, a, b)
            }
        } else if roll <= 7 {
            let (base, index) = self.address(sc);
            Rhs::MemRead { base, index }
        } else {
            Rhs::Operand(self.var_operand(sc))
        };
        let range = match &rhs {
            Rhs::Operand(o) => sc.range(o),
            Rhs::BinOp(op, a, b) => Interval::apply(*op, sc.range(a), sc.range(b)),
            Rhs::MemRead { .. } => Some(HEAP_VALUES),
            Rhs::Call { .. } => None,
        };
        let dst = self.dst(sc);
        sc.define(&dst, range);
        Statement::Assign { dst, rhs }
    }

    fn args(&mut self, sc: &Scope, n: usize) -> Vec<Operand> {
        (0..n).map(|_| self.operand(sc)).collect()
    }

    fn call(&mut self, sc: &mut Scope) -> Statement {
        let (callee, n) = self.callees.choose(&mut self.rng).cloned().expect("caller checked");
        let args = self.args(sc, n);
        if self.chance(0.7) {
            let dst = self.dst(sc);
            sc.define(&dst, None);
            Statement::Assign { dst, rhs: Rhs::Call { callee, args } }
        } else {
            Statement::Call { callee, args }
        }
    }

    fn test(&mut self, sc: &Scope) -> Test {
        let rel = *[Relation::Lt, Relation::Le, Relation::Eq, Relation::Ge, Relation::Gt].choose(&mut self.rng).expect("nonempty");
        let a = self.var_operand(sc);
        let b = self.operand(sc);
        if self.chance(0.15) {
            Test { rel, a: b, b: a }
        } else {
            Test { rel, a, b }
        }
    }

    fn straight(&self) -> bool {
        self.cfg.shape != Shape::General
    }

    /// A block that consumes at most `self.budget` statements. When `tail`,
    /// it ends by leaving the procedure.
    fn block(&mut self, sc: &mut Scope, depth: usize, tail: bool) -> Vec<Statement> {
        let mut out = Vec::new();
        // one statement is held back for the tail
        let reserve = usize::from(tail);
        let want = self.rng.gen_range(1..=self.budget.saturating_sub(reserve).clamp(1, 12));
        for _ in 0..want {
            if self.budget <= reserve {
                break;
            }
            let roll = self.rng.gen_range(0..20);
            let s = if !self.straight() && roll < 2 && depth < self.cfg.max_if_depth && self.budget >= 3 + reserve {
                self.budget -= 1;
                let test = self.test(sc);
                let (mut st, mut se) = (sc.clone(), sc.clone());
                let share = (self.budget - reserve) / 2;
                let rest = self.budget - share;
                self.budget = share;
                let then_branch = self.block(&mut st, depth + 1, false);
                self.budget += rest - reserve;
                let else_branch = self.block(&mut se, depth + 1, false);
                self.budget += reserve;
                *sc = sc.join(&st, &se);
                out.push(Statement::If { test, then_branch, else_branch });
                continue;
            } else if !self.straight() && roll < 5 && !self.callees.is_empty() {
                self.call(sc)
            } else if roll < 8 && !sc.defined.is_empty() {
                self.mem_write(sc)
            } else {
                self.assign(sc)
            };
            self.budget -= 1;
            out.push(s);
        }
        if out.is_empty() && !tail {
            self.budget = self.budget.saturating_sub(1);
            out.push(self.assign(sc));
        }
        if tail {
            out.extend(self.tail(sc, depth));
        }
        out
    }

    fn tail(&mut self, sc: &mut Scope, depth: usize) -> Vec<Statement> {
        self.budget = self.budget.saturating_sub(1);
        let roll = self.rng.gen_range(0..10);
        if !self.straight() && roll < 2 && depth < self.cfg.max_if_depth && self.budget >= 2 {
            let test = self.test(sc);
            let (mut st, mut se) = (sc.clone(), sc.clone());
            let share = self.budget / 2;
            let rest = self.budget - share;
            self.budget = share;
            let then_branch = self.block(&mut st, depth + 1, true);
            self.budget += rest;
            let else_branch = self.block(&mut se, depth + 1, true);
            return vec![Statement::If { test, then_branch, else_branch }];
        }
        if !self.straight() && roll < 5 && !self.callees.is_empty() {
            let (callee, n) = self.callees.choose(&mut self.rng).cloned().expect("nonempty");
            let args = self.args(sc, n);
            return vec![Statement::Call { callee, args }];
        }
        let v = if self.straight() { self.var_operand(sc) } else { self.operand(sc) };
        vec![Statement::Return(v)]
    }
}

/// Generate one valid program from `seed`.
pub fn generate(cfg: &GenConfig, seed: u64) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nprocs = if cfg.shape == Shape::General { rng.gen_range(0..=cfg.max_procs.min(PROC_NAMES.len())) } else { 0 };
    let arities: Vec<usize> = (0..nprocs).map(|_| rng.gen_range(0..=cfg.max_params)).collect();
    let target_live = match cfg.pressure {
        Some(r) => (r as i64 + rng.gen_range(-2..=2)).clamp(1, cfg.max_vars as i64) as usize,
        None => rng.gen_range(2..=cfg.max_vars),
    };
    let names: Vec<Ident> = VAR_NAMES.iter().take(cfg.max_vars).map(|s| Ident::new(s)).collect();
    let total = cfg.max_stmts.max(nprocs + 1);
    let mut g = Gen { cfg, rng, budget: 0, callees: Vec::new(), names, target_live };

    // the entry body gets a larger share than each procedure
    let mut shares = vec![total / (nprocs + 2); nprocs];
    let entry_share = total - shares.iter().sum::<usize>();
    let mut definitions = Vec::with_capacity(nprocs);
    for i in 0..nprocs {
        let name = Ident::new(PROC_NAMES[i]);
        g.callees = (i + 1..nprocs).map(|j| (Ident::new(PROC_NAMES[j]), arities[j])).collect();
        let params: Vec<Ident> = g.names[..arities[i].min(g.names.len())].to_vec();
        let mut sc = Scope::default();
        for p in &params {
            sc.define(p, None);
        }
        g.budget = std::mem::take(&mut shares[i]).max(1);
        let body = g.block(&mut sc, 0, true);
        definitions.push(Definition { name, params, body });
    }
    g.callees = (0..nprocs).map(|j| (Ident::new(PROC_NAMES[j]), arities[j])).collect();
    g.budget = entry_share.max(1);
    let body = g.block(&mut Scope::default(), 0, true);
    Program { definitions, body }
}

/// Count every statement, nested ones included.
pub fn statement_count(p: &Program) -> usize {
    fn count(stmts: &[Statement]) -> usize {
        stmts
            .iter()
            .map(|s| match s {
                Statement::If { then_branch, else_branch, .. } => 1 + count(then_branch) + count(else_branch),
                _ => 1,
            })
            .sum()
    }
    count(&p.body) + p.definitions.iter().map(|d| count(&d.body)).sum::<usize>()
}
