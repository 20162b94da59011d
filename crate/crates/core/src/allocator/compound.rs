//! Compound transformers: one per statement form.

use std::collections::{BTreeMap, BTreeSet};

use super::primitives::{acquire, load, Pressure};
use super::shuffle::{sequentialize, MoveSource};
use super::{AllocConfig, AllocError, Checkpoint, Code, Ctx, ProgramState, TraceEntry, TransformResult, Value};
use crate::analysis::{AnnotatedProc, AnnotatedStatement, Block, NextUse, Node};
use crate::machine::{Inst, JumpTarget, Label, RegOrImm};
use crate::model::{Location, Model, ModelError, Reg, Slot, Var};
use crate::uil::{Ident, Operand, Relation, Rhs, Statement, Test};

/// Builds the instruction from the destination, operand registers, and an
/// optional immediate second operand.
type Emit = Box<dyn Fn(Reg, &[Reg], Option<i64>) -> Inst>;

pub(crate) struct ProcAlloc<'a> {
    cfg: &'a AllocConfig,
    proc: &'a AnnotatedProc,
    st: &'a mut ProgramState,
    prefer: Option<Model>,
    next_temp: u32,
}

/// Operands after immediate placement: registers for every operand in
/// `regs`, plus an optional trailing immediate.
struct Loaded {
    model: Model,
    regs: Vec<Reg>,
    temps: Vec<Var>,
}

fn stmt_head(s: &AnnotatedStatement) -> String {
    match &s.node {
        Node::Leaf(stmt) => stmt.to_string(),
        Node::If { test, .. } => format!("(if ({} {} {}) ...)", test.rel.symbol(), test.a, test.b),
    }
}

fn vars_of(ids: &BTreeSet<Ident>) -> BTreeSet<Var> {
    ids.iter().map(Var::from).collect()
}

impl<'a> ProcAlloc<'a> {
    pub fn new(cfg: &'a AllocConfig, proc: &'a AnnotatedProc, st: &'a mut ProgramState) -> Self {
        ProcAlloc { cfg, proc, st, prefer: None, next_temp: 0 }
    }

    fn pressure(&self, s: &AnnotatedStatement) -> Pressure<'_> {
        Pressure {
            cfg: &self.cfg.machine,
            table: &self.proc.next_use,
            point: s.point,
            policy: self.cfg.policy,
            prefer: self.prefer.as_ref(),
        }
    }

    fn registers(&self) -> usize {
        self.cfg.machine.registers
    }

    fn locate(&self, s: &AnnotatedStatement, e: AllocError) -> AllocError {
        match e {
            AllocError::NoVictim { .. } => AllocError::RegisterPressure {
                proc: self.proc.name.as_ref().map_or("the entry body".to_string(), |n| format!("`{n}`")),
                point: s.point.0,
                stmt: stmt_head(s),
                registers: self.registers(),
            },
            e => e,
        }
    }

    /// Allocate a block. Returns the final model, or `None` when the block
    /// ends by leaving the procedure.
    pub fn block(&mut self, b: &Block, m: Model, code: &mut Code) -> Result<Option<Model>, AllocError> {
        let mut m = m.drop_vars(&vars_of(&b.entry_dead));
        for s in &b.stmts {
            match self.stmt(s, m, code)? {
                Some(next) => m = next,
                None => return Ok(None),
            }
        }
        Ok(Some(m))
    }

    pub fn stmt(&mut self, s: &AnnotatedStatement, m: Model, code: &mut Code) -> Result<Option<Model>, AllocError> {
        let entry = code.trace.len();
        code.trace.push(TraceEntry {
            proc: self.proc.name.clone(),
            point: Some(s.point),
            what: stmt_head(s),
            start: code.insts.len(),
            before: m.clone(),
            after: None,
        });
        let out = self.dispatch(s, m, code).map_err(|e| self.locate(s, e))?;
        if let Some(after) = &out {
            if !matches!(s.node, Node::If { .. }) {
                code.trace[entry].after = Some(after.clone());
            }
            if self.cfg.instrument {
                code.push(Inst::Mark(self.st.checkpoints.len() as u32));
                self.st.checkpoints.push(Checkpoint { proc: self.proc.name.clone(), point: s.point, model: after.clone() });
            }
        }
        Ok(out)
    }

    fn dispatch(&mut self, s: &AnnotatedStatement, m: Model, code: &mut Code) -> Result<Option<Model>, AllocError> {
        match &s.node {
            Node::If { test, then_branch, else_branch } => self.alloc_if(s, test, then_branch, else_branch, m, code),
            Node::Leaf(stmt) => match stmt {
                Statement::Assign { dst, rhs: Rhs::Call { callee, args } } => self.call(s, callee, args, Some(dst), m, code).map(Some),
                Statement::Assign { dst, rhs } => self.assign(s, dst, rhs, m, code).map(Some),
                Statement::MemWrite { base, index, src } => self.mem_write(s, [base, index, src], m, code).map(Some),
                Statement::Call { callee, args } if s.tail && !self.proc.is_entry() => {
                    self.tail_call(callee, args, m, code)?;
                    Ok(None)
                }
                Statement::Call { callee, args } => {
                    let m = self.call(s, callee, args, None, m, code)?;
                    if s.tail {
                        code.push(Inst::Halt);
                        Ok(None)
                    } else {
                        Ok(Some(m))
                    }
                }
                Statement::Return(v) => {
                    self.ret(v, m, code)?;
                    Ok(None)
                }
                Statement::If { .. } => unreachable!("annotated as Node::If"),
            },
        }
    }

    /// Registers for `ops`: variables are loaded first, then each distinct
    /// immediate is materialized into a fresh temporary.
    fn operands(&mut self, s: &AnnotatedStatement, ops: &[&Operand], m: Model, code: &mut Code) -> Result<Loaded, AllocError> {
        let mut vars: Vec<Var> = Vec::new();
        for o in ops {
            if let Operand::Var(v) = o {
                let v = Var::from(v);
                if !vars.contains(&v) {
                    vars.push(v);
                }
            }
        }
        let protected: BTreeSet<Var> = vars.iter().cloned().collect();
        let (mut m, insts) = load(&m, &vars, &protected, self.pressure(s))?;
        code.extend(insts);
        let mut keep = protected;
        let mut temps: Vec<(i64, Var)> = Vec::new();
        let mut regs = Vec::with_capacity(ops.len());
        for o in ops {
            let r = match o {
                Operand::Var(v) => m.reg_of(&Var::from(v)).expect("loaded above"),
                Operand::Imm(n) => match temps.iter().find(|(k, _)| k == n) {
                    Some((_, t)) => m.reg_of(t).expect("temporaries stay resident"),
                    None => {
                        let t = Var::Temp(self.next_temp);
                        self.next_temp += 1;
                        let (m2, r, insts) = acquire(&m, &t, &keep, self.pressure(s))?;
                        code.extend(insts);
                        code.push(Inst::LoadImm { dst: r, imm: *n });
                        m = m2.bind_reg(t.clone(), r)?;
                        keep.insert(t.clone());
                        temps.push((*n, t));
                        r
                    }
                },
            };
            regs.push(r);
        }
        Ok(Loaded { model: m, regs, temps: temps.into_iter().map(|(_, t)| t).collect() })
    }

    /// Pick the destination register after operands and dying names are
    /// gone: a preferred register, then one an operand just vacated, then
    /// first-fit, then a victim's.
    fn dst_reg(&self, s: &AnnotatedStatement, m: &Model, dst: &Var, vacated: &[Reg], code: &mut Code) -> Result<(Model, Reg), AllocError> {
        let hinted = self.prefer.as_ref().and_then(|p| p.reg_of(dst)).filter(|r| m.occupant_of_reg(*r).is_none());
        if let Some(r) = hinted.or_else(|| vacated.iter().copied().find(|r| m.occupant_of_reg(*r).is_none())) {
            return Ok((m.clone(), r));
        }
        let (m2, r, insts) = acquire(m, dst, &BTreeSet::new(), self.pressure(s))?;
        code.extend(insts);
        Ok((m2, r))
    }

    /// Drop `ends`, the destination's previous value, and temporaries.
    /// Returns the registers thereby vacated, in operand order.
    fn retire(&self, s: &AnnotatedStatement, dst: Option<&Var>, loaded: &Loaded, ops: &[&Operand]) -> (Model, Vec<Reg>) {
        let mut gone = vars_of(&s.ends);
        gone.extend(dst.cloned());
        gone.extend(loaded.temps.iter().cloned());
        let vacated = ops
            .iter()
            .zip(&loaded.regs)
            .filter(|(o, _)| match o {
                Operand::Var(v) => gone.contains(&Var::from(v)),
                Operand::Imm(_) => true,
            })
            .map(|(_, r)| *r)
            .collect();
        (loaded.model.drop_vars(&gone), vacated)
    }

    fn finish_def(&self, s: &AnnotatedStatement, m: Model, dst: Var, r: Reg) -> Result<Model, AllocError> {
        let m = m.bind_reg(dst.clone(), r)?;
        Ok(match self.proc.next_use.next_use(s.point, &dst) {
            NextUse::Never => m.drop_vars([&dst]),
            NextUse::At(_) => m,
        })
    }

    fn assign(&mut self, s: &AnnotatedStatement, dst: &Ident, rhs: &Rhs, m: Model, code: &mut Code) -> Result<Model, AllocError> {
        let dst = Var::from(dst);
        let (ops, imm_b, emit): (Vec<&Operand>, Option<i64>, Emit) = match rhs {
            Rhs::Operand(Operand::Imm(n)) => {
                let n = *n;
                (vec![], None, Box::new(move |d, _, _| Inst::LoadImm { dst: d, imm: n }))
            }
            Rhs::Operand(o) => (vec![o], None, Box::new(|d, r, _| Inst::Move { dst: d, src: r[0] })),
            Rhs::BinOp(op, a, b) => {
                let op = *op;
                let bin = move |d, r: &[Reg], imm: Option<i64>| Inst::BinOp {
                    op,
                    dst: d,
                    a: r[0],
                    b: imm.map_or(RegOrImm::Reg(*r.get(1).unwrap_or(&r[0])), RegOrImm::Imm),
                };
                match (a, b) {
                    (Operand::Imm(x), Operand::Imm(y)) => {
                        let n = op.apply(*x, *y);
                        (vec![], None, Box::new(move |d, _, _| Inst::LoadImm { dst: d, imm: n }))
                    }
                    (Operand::Var(_), Operand::Imm(y)) => (vec![a], Some(*y), Box::new(bin)),
                    (Operand::Imm(x), Operand::Var(_)) if op.is_commutative() => (vec![b], Some(*x), Box::new(bin)),
                    _ => (vec![a, b], None, Box::new(bin)),
                }
            }
            Rhs::MemRead { base, index } => {
                (vec![base, index], None, Box::new(|d, r, _| Inst::MemLoad { dst: d, base: r[0], index: r[1] }))
            }
            Rhs::Call { .. } => unreachable!("dispatched to call"),
        };
        let loaded = self.operands(s, &ops, m, code)?;
        let (m1, vacated) = self.retire(s, Some(&dst), &loaded, &ops);
        let (m2, rd) = self.dst_reg(s, &m1, &dst, &vacated, code)?;
        let inst = emit(rd, &loaded.regs, imm_b);
        if inst != (Inst::Move { dst: rd, src: rd }) {
            code.push(inst);
        }
        self.finish_def(s, m2, dst, rd)
    }

    fn mem_write(&mut self, s: &AnnotatedStatement, ops: [&Operand; 3], m: Model, code: &mut Code) -> Result<Model, AllocError> {
        let loaded = self.operands(s, &ops, m, code)?;
        code.push(Inst::MemStore { base: loaded.regs[0], index: loaded.regs[1], src: loaded.regs[2] });
        Ok(self.retire(s, None, &loaded, &ops).0)
    }

    fn alloc_if(
        &mut self,
        s: &AnnotatedStatement,
        test: &Test,
        then_branch: &Block,
        else_branch: &Block,
        m: Model,
        code: &mut Code,
    ) -> Result<Option<Model>, AllocError> {
        let head = code.trace.len() - 1;
        let (rel, ops, imm_b) = match (&test.a, &test.b) {
            (Operand::Var(_), Operand::Imm(n)) => (test.rel, vec![&test.a], Some(*n)),
            (Operand::Imm(n), Operand::Var(_)) => (test.rel.flipped(), vec![&test.b], Some(*n)),
            (Operand::Imm(_), Operand::Imm(n)) => (test.rel, vec![&test.a], Some(*n)),
            _ => (test.rel, vec![&test.a, &test.b], None),
        };
        let loaded = self.operands(s, &ops, m, code)?;
        let then_label = self.st.fresh_label();
        code.push(cond_jump(rel, &loaded.regs, imm_b, then_label.clone()));
        let (m1, _) = self.retire(s, None, &loaded, &ops);
        code.trace[head].after = Some(m1.clone());

        let mut then_code = Code::default();
        then_code.push(Inst::LabelDef(then_label));
        let m2 = self.block(then_branch, m1.clone(), &mut then_code)?;
        let outer = self.prefer.clone();
        if self.cfg.preferences {
            if let Some(m2) = &m2 {
                self.prefer = Some(m2.clone());
            }
        }
        let mut else_code = Code::default();
        let m3 = self.block(else_branch, m1, &mut else_code);
        self.prefer = outer;
        let m3 = m3?;

        match (m2, m3) {
            (None, None) => {
                code.append(else_code);
                code.append(then_code);
                Ok(None)
            }
            (Some(m2), Some(m3)) => {
                let moves = join_moves(&m2, &m3)?;
                let insts = sequentialize(&moves, self.registers(), &BTreeSet::new(), 0)?;
                then_code.trace.push(TraceEntry {
                    proc: self.proc.name.clone(),
                    point: Some(s.point),
                    what: "join".into(),
                    start: then_code.insts.len(),
                    before: m2,
                    after: Some(m3.clone()),
                });
                then_code.extend(insts);
                let join = self.st.fresh_label();
                code.append(else_code);
                code.push(Inst::Jump(JumpTarget::Label(join.clone())));
                code.append(then_code);
                code.push(Inst::LabelDef(join));
                Ok(Some(m3))
            }
            _ => Err(AllocError::Internal("only one branch of an `if` leaves the procedure".into())),
        }
    }

    fn check_arity(&self, callee: &Ident, args: &[Operand]) -> Result<(), AllocError> {
        match self.st.arities.get(callee) {
            None => Err(AllocError::UnknownProcedure(callee.clone())),
            Some(&n) if n != args.len() => Err(AllocError::Arity { callee: callee.clone(), expected: n, found: args.len() }),
            Some(_) => Ok(()),
        }
    }

    fn arg_source(m: &Model, a: &Operand) -> Result<MoveSource, AllocError> {
        Ok(match a {
            Operand::Imm(n) => MoveSource::Imm(*n),
            Operand::Var(v) => MoveSource::Loc(m.whereis(&Var::from(v))?),
        })
    }

    /// Non-tail call: save call-lives into slots `0..k`, pass arguments,
    /// jump with the return label in the return-address register, and
    /// resume with call-lives in the stack and the result in the
    /// return-value register.
    fn call(
        &mut self,
        s: &AnnotatedStatement,
        callee: &Ident,
        args: &[Operand],
        dst: Option<&Ident>,
        m: Model,
        code: &mut Code,
    ) -> Result<Model, AllocError> {
        self.check_arity(callee, args)?;
        let mut gone = vars_of(&s.ends);
        gone.extend(dst.map(Var::from));
        let live = m.drop_vars(&gone);
        let call_lives: Vec<Var> = live.vars().into_iter().collect();
        let k = call_lives.len() as u32;

        let mut home: BTreeMap<Var, Slot> = BTreeMap::new();
        for v in &call_lives {
            if let Some(s) = live.slot_of(v).filter(|s| s.0 < k) {
                home.insert(v.clone(), s);
            }
        }
        let taken: BTreeSet<Slot> = home.values().copied().collect();
        let mut free = (0..k).map(Slot).filter(|s| !taken.contains(s));
        for v in &call_lives {
            if !home.contains_key(v) {
                home.insert(v.clone(), free.next().expect("k slots for k call-lives"));
            }
        }

        let mut moves = Vec::new();
        for (v, &slot) in &home {
            let src = match (live.slot_of(v), live.reg_of(v)) {
                (Some(cur), _) if cur == slot => Location::Slot(cur),
                (_, Some(r)) => Location::Reg(r),
                (Some(cur), None) => Location::Slot(cur),
                (None, None) => return Err(ModelError::Unbound(v.clone()).into()),
            };
            moves.push((MoveSource::Loc(src), Location::Slot(slot)));
        }
        for (i, a) in args.iter().enumerate() {
            moves.push((Self::arg_source(&m, a)?, self.cfg.machine.arg_location(i, k)));
        }
        code.extend(sequentialize(&moves, self.registers(), &BTreeSet::new(), 0)?);

        let back = self.st.fresh_label();
        code.push(Inst::LoadLabel { dst: self.cfg.machine.ret_addr_reg, label: back.clone() });
        if k > 0 {
            code.push(Inst::FrameAdjust(k as i64));
        }
        code.push(Inst::Jump(JumpTarget::Label(Label::Proc(callee.clone()))));
        code.push(Inst::LabelDef(back));
        if k > 0 {
            code.push(Inst::FrameAdjust(-(k as i64)));
        }

        let mut after = Model::new();
        for (v, slot) in home {
            after = after.bind_slot(v, slot)?;
        }
        match dst {
            Some(d) => self.finish_def(s, after, Var::from(d), self.cfg.machine.ret_val_reg),
            None => Ok(after),
        }
    }

    fn tail_call(&mut self, callee: &Ident, args: &[Operand], m: Model, code: &mut Code) -> Result<(), AllocError> {
        self.check_arity(callee, args)?;
        let mut moves = Vec::new();
        for (i, a) in args.iter().enumerate() {
            moves.push((Self::arg_source(&m, a)?, self.cfg.machine.arg_location(i, 0)));
        }
        let ret = m.whereis(&Var::Ret)?;
        moves.push((MoveSource::Loc(ret), Location::Reg(self.cfg.machine.ret_addr_reg)));
        code.extend(sequentialize(&moves, self.registers(), &BTreeSet::new(), 0)?);
        code.push(Inst::Jump(JumpTarget::Label(Label::Proc(callee.clone()))));
        Ok(())
    }

    fn ret(&mut self, v: &Operand, m: Model, code: &mut Code) -> Result<(), AllocError> {
        let mc = &self.cfg.machine;
        let mut moves = vec![(Self::arg_source(&m, v)?, Location::Reg(mc.ret_val_reg))];
        if self.proc.is_entry() {
            code.extend(sequentialize(&moves, self.registers(), &BTreeSet::new(), 0)?);
            code.push(Inst::Halt);
            return Ok(());
        }
        let target = match m.reg_of(&Var::Ret) {
            Some(r) if r != mc.ret_val_reg => r,
            _ => mc.ret_addr_reg,
        };
        moves.push((MoveSource::Loc(m.whereis(&Var::Ret)?), Location::Reg(target)));
        code.extend(sequentialize(&moves, self.registers(), &BTreeSet::new(), 0)?);
        code.push(Inst::Jump(JumpTarget::Reg(target)));
        Ok(())
    }
}

fn cond_jump(rel: Relation, regs: &[Reg], imm_b: Option<i64>, target: Label) -> Inst {
    let b = match imm_b {
        Some(n) => RegOrImm::Imm(n),
        None => RegOrImm::Reg(regs[1]),
    };
    Inst::CondJump { rel, a: regs[0], b, target }
}

/// Moves that bring every binding of `to` into place starting from `from`.
fn join_moves(from: &Model, to: &Model) -> Result<Vec<(MoveSource, Location)>, AllocError> {
    let mut moves = Vec::new();
    let source = |v: &Var, want: Location| -> Result<MoveSource, AllocError> {
        let here = match want {
            Location::Reg(r) => from.reg_of(v) == Some(r),
            Location::Slot(s) => from.slot_of(v) == Some(s),
        };
        if here {
            return Ok(MoveSource::Loc(want));
        }
        from.whereis(v)
            .map(MoveSource::Loc)
            .map_err(|_| AllocError::Internal(format!("`{v}` is live at a join but unbound in the then-branch")))
    };
    for (v, r) in to.register_bindings() {
        moves.push((source(v, Location::Reg(r))?, Location::Reg(r)));
    }
    for (v, s) in to.slot_bindings() {
        moves.push((source(v, Location::Slot(s))?, Location::Slot(s)));
    }
    Ok(moves)
}

/// Allocate a single statement of `proc` from model `m`. Labels are
/// numbered from zero, so the result stands alone rather than splicing into
/// a larger program.
pub fn alloc_stmt(
    s: &AnnotatedStatement,
    m: &Model,
    ctx: Ctx,
    proc: &AnnotatedProc,
    arities: &BTreeMap<Ident, usize>,
    cfg: &AllocConfig,
) -> Result<TransformResult, AllocError> {
    let mut s = s.clone();
    s.tail = ctx == Ctx::Tail;
    let mut st = ProgramState { arities: arities.clone(), next_label: 0, checkpoints: Vec::new() };
    let mut pa = ProcAlloc::new(cfg, proc, &mut st);
    let mut code = Code::default();
    let after = pa.stmt(&s, m.clone(), &mut code)?;
    let model = after.unwrap_or_default();
    let value = match &s.node {
        Node::Leaf(Statement::Return(_)) => Value::Loc(Location::Reg(cfg.machine.ret_val_reg)),
        Node::Leaf(Statement::Assign { dst, rhs }) => match (rhs, model.whereis(&Var::from(dst))) {
            (_, Ok(loc)) => Value::Loc(loc),
            (Rhs::Operand(Operand::Imm(n)), Err(_)) => Value::Imm(*n),
            _ => Value::None,
        },
        _ => Value::None,
    };
    Ok(TransformResult { insts: code.insts, value, model })
}
