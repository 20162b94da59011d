//! Target register-machine instructions and their assembly text form.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model::{Reg, Slot};
use crate::uil::{BinOp, Ident, Relation};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Proc(Ident),
    Local(u32),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Proc(name) => write!(f, "{name}"),
            Label::Local(n) => write!(f, "L{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegOrImm {
    Reg(Reg),
    Imm(i64),
}

impl fmt::Display for RegOrImm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegOrImm::Reg(r) => r.fmt(f),
            RegOrImm::Imm(n) => n.fmt(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum JumpTarget {
    Label(Label),
    /// Indirect jump through a register holding a label index.
    Reg(Reg),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Inst {
    Move {
        dst: Reg,
        src: Reg,
    },
    LoadImm {
        dst: Reg,
        imm: i64,
    },
    Load {
        dst: Reg,
        slot: Slot,
    },
    Store {
        slot: Slot,
        src: Reg,
    },
    BinOp {
        op: BinOp,
        dst: Reg,
        a: Reg,
        b: RegOrImm,
    },
    MemLoad {
        dst: Reg,
        base: Reg,
        index: Reg,
    },
    MemStore {
        base: Reg,
        index: Reg,
        src: Reg,
    },
    CondJump {
        rel: Relation,
        a: Reg,
        b: RegOrImm,
        target: Label,
    },
    Jump(JumpTarget),
    LoadLabel {
        dst: Reg,
        label: Label,
    },
    LabelDef(Label),
    FrameAdjust(i64),
    Halt,
    /// Instrumentation checkpoint; no effect on machine state.
    Mark(u32),
}

impl Inst {
    /// Pseudo-instructions occupy no machine cycle.
    pub fn is_pseudo(&self) -> bool {
        matches!(self, Inst::LabelDef(_) | Inst::Mark(_))
    }

    /// Registers read by the instruction.
    pub fn reads(&self) -> Vec<Reg> {
        let imm = |b: &RegOrImm| match b {
            RegOrImm::Reg(r) => Some(*r),
            RegOrImm::Imm(_) => None,
        };
        match self {
            Inst::Move { src, .. } | Inst::Store { src, .. } => vec![*src],
            Inst::BinOp { a, b, .. } | Inst::CondJump { a, b, .. } => std::iter::once(*a).chain(imm(b)).collect(),
            Inst::MemLoad { base, index, .. } => vec![*base, *index],
            Inst::MemStore { base, index, src } => vec![*base, *index, *src],
            Inst::Jump(JumpTarget::Reg(r)) => vec![*r],
            _ => vec![],
        }
    }

    /// Register written by the instruction, if any.
    pub fn writes(&self) -> Option<Reg> {
        match self {
            Inst::Move { dst, .. }
            | Inst::LoadImm { dst, .. }
            | Inst::Load { dst, .. }
            | Inst::BinOp { dst, .. }
            | Inst::MemLoad { dst, .. }
            | Inst::LoadLabel { dst, .. } => Some(*dst),
            _ => None,
        }
    }

    /// Short opcode name, as printed.
    pub fn opcode(&self) -> &'static str {
        match self {
            Inst::Move { .. } => "move",
            Inst::LoadImm { .. } => "li",
            Inst::Load { .. } => "load",
            Inst::Store { .. } => "store",
            Inst::BinOp { op, .. } => binop_name(*op),
            Inst::MemLoad { .. } => "mload",
            Inst::MemStore { .. } => "mstore",
            Inst::CondJump { rel, .. } => branch_name(*rel),
            Inst::Jump(_) => "jmp",
            Inst::LoadLabel { .. } => "la",
            Inst::LabelDef(_) => "label",
            Inst::FrameAdjust(_) => "fp+=",
            Inst::Halt => "halt",
            Inst::Mark(_) => "mark",
        }
    }
}

fn binop_name(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "add",
        BinOp::Sub => "sub",
        BinOp::Mul => "mul",
    }
}

fn branch_name(rel: Relation) -> &'static str {
    match rel {
        Relation::Lt => "blt",
        Relation::Le => "ble",
        Relation::Eq => "beq",
        Relation::Ge => "bge",
        Relation::Gt => "bgt",
    }
}

impl fmt::Display for Inst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inst::Move { dst, src } => write!(f, "move {dst}, {src}"),
            Inst::LoadImm { dst, imm } => write!(f, "li {dst}, {imm}"),
            Inst::Load { dst, slot } => write!(f, "load {dst}, {slot}"),
            Inst::Store { slot, src } => write!(f, "store {slot}, {src}"),
            Inst::BinOp { op, dst, a, b } => write!(f, "{} {dst}, {a}, {b}", binop_name(*op)),
            Inst::MemLoad { dst, base, index } => write!(f, "mload {dst}, {base}, {index}"),
            Inst::MemStore { base, index, src } => write!(f, "mstore {base}, {index}, {src}"),
            Inst::CondJump { rel, a, b, target } => write!(f, "{} {a}, {b}, {target}", branch_name(*rel)),
            Inst::Jump(JumpTarget::Label(l)) => write!(f, "jmp {l}"),
            Inst::Jump(JumpTarget::Reg(r)) => write!(f, "jmp {r}"),
            Inst::LoadLabel { dst, label } => write!(f, "la {dst}, {label}"),
            Inst::LabelDef(l) => write!(f, "{l}:"),
            Inst::FrameAdjust(d) => write!(f, "fp+= {d}"),
            Inst::Halt => f.write_str("halt"),
            Inst::Mark(n) => write!(f, "mark {n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("label `{0}` is defined more than once")]
    DuplicateLabel(Label),
    #[error("label `{0}` is used but never defined")]
    UndefinedLabel(Label),
}

/// A flat instruction sequence with its label table. Execution starts at
/// instruction 0; label values (for indirect jumps) are indices into
/// [`TargetProgram::labels`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetProgram {
    insts: Vec<Inst>,
    labels: Vec<Label>,
    label_pc: BTreeMap<Label, usize>,
}

impl TargetProgram {
    pub fn new(insts: Vec<Inst>) -> Result<Self, AsmError> {
        let mut labels = Vec::new();
        let mut label_pc = BTreeMap::new();
        for (pc, i) in insts.iter().enumerate() {
            if let Inst::LabelDef(l) = i {
                if label_pc.insert(l.clone(), pc).is_some() {
                    return Err(AsmError::DuplicateLabel(l.clone()));
                }
                labels.push(l.clone());
            }
        }
        for i in &insts {
            let used = match i {
                Inst::CondJump { target, .. } => Some(target),
                Inst::Jump(JumpTarget::Label(l)) => Some(l),
                Inst::LoadLabel { label, .. } => Some(label),
                _ => None,
            };
            if let Some(l) = used {
                if !label_pc.contains_key(l) {
                    return Err(AsmError::UndefinedLabel(l.clone()));
                }
            }
        }
        Ok(TargetProgram { insts, labels, label_pc })
    }

    pub fn insts(&self) -> &[Inst] {
        &self.insts
    }

    pub fn into_insts(self) -> Vec<Inst> {
        self.insts
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label_pc(&self, l: &Label) -> Option<usize> {
        self.label_pc.get(l).copied()
    }

    /// The word value a `la` instruction loads for `l`.
    pub fn label_value(&self, l: &Label) -> Option<i64> {
        self.labels.iter().position(|x| x == l).map(|i| i as i64)
    }

    /// Largest register index mentioned, plus one.
    pub fn register_span(&self) -> usize {
        self.insts.iter().flat_map(|i| i.reads().into_iter().chain(i.writes())).map(|r| r.0 as usize + 1).max().unwrap_or(0)
    }

    /// Parse the assembly text produced by `Display`.
    pub fn parse(text: &str) -> Result<Self, AsmError> {
        let mut insts = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(';').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            insts.push(parse_line(line).map_err(|message| AsmError::Syntax { line: n + 1, message })?);
        }
        TargetProgram::new(insts)
    }
}

impl fmt::Display for TargetProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.insts {
            match i {
                Inst::LabelDef(_) => writeln!(f, "{i}")?,
                _ => writeln!(f, "  {i}")?,
            }
        }
        Ok(())
    }
}

fn reg(s: &str) -> Result<Reg, String> {
    s.strip_prefix('r').and_then(|n| n.parse().ok()).map(Reg).ok_or_else(|| format!("expected register, found `{s}`"))
}

fn slot(s: &str) -> Result<Slot, String> {
    s.strip_prefix("fv").and_then(|n| n.parse().ok()).map(Slot).ok_or_else(|| format!("expected frame slot, found `{s}`"))
}

fn reg_or_imm(s: &str) -> Result<RegOrImm, String> {
    match s.parse::<i64>() {
        Ok(n) => Ok(RegOrImm::Imm(n)),
        Err(_) => reg(s).map(RegOrImm::Reg),
    }
}

fn imm(s: &str) -> Result<i64, String> {
    s.parse().map_err(|_| format!("expected integer, found `{s}`"))
}

fn label(s: &str) -> Result<Label, String> {
    if s.is_empty() {
        return Err("empty label".into());
    }
    match s.strip_prefix('L').and_then(|n| n.parse().ok()) {
        Some(n) if s[1..].chars().all(|c| c.is_ascii_digit()) => Ok(Label::Local(n)),
        _ => Ok(Label::Proc(Ident::new(s))),
    }
}

fn parse_line(line: &str) -> Result<Inst, String> {
    if let Some(name) = line.strip_suffix(':') {
        return label(name.trim()).map(Inst::LabelDef);
    }
    let (op, rest) = match line.find(char::is_whitespace) {
        Some(i) => (&line[..i], line[i..].trim()),
        None => (line, ""),
    };
    let args: Vec<&str> = if rest.is_empty() { vec![] } else { rest.split(',').map(str::trim).collect() };
    let want = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("`{op}` takes {n} operand(s), found {}", args.len()))
        }
    };
    let binop = match op {
        "add" => Some(BinOp::Add),
        "sub" => Some(BinOp::Sub),
        "mul" => Some(BinOp::Mul),
        _ => None,
    };
    if let Some(op) = binop {
        want(3)?;
        return Ok(Inst::BinOp { op, dst: reg(args[0])?, a: reg(args[1])?, b: reg_or_imm(args[2])? });
    }
    let rel = match op {
        "blt" => Some(Relation::Lt),
        "ble" => Some(Relation::Le),
        "beq" => Some(Relation::Eq),
        "bge" => Some(Relation::Ge),
        "bgt" => Some(Relation::Gt),
        _ => None,
    };
    if let Some(rel) = rel {
        want(3)?;
        return Ok(Inst::CondJump { rel, a: reg(args[0])?, b: reg_or_imm(args[1])?, target: label(args[2])? });
    }
    match op {
        "move" => {
            want(2)?;
            Ok(Inst::Move { dst: reg(args[0])?, src: reg(args[1])? })
        }
        "li" => {
            want(2)?;
            Ok(Inst::LoadImm { dst: reg(args[0])?, imm: imm(args[1])? })
        }
        "load" => {
            want(2)?;
            Ok(Inst::Load { dst: reg(args[0])?, slot: slot(args[1])? })
        }
        "store" => {
            want(2)?;
            Ok(Inst::Store { slot: slot(args[0])?, src: reg(args[1])? })
        }
        "mload" => {
            want(3)?;
            Ok(Inst::MemLoad { dst: reg(args[0])?, base: reg(args[1])?, index: reg(args[2])? })
        }
        "mstore" => {
            want(3)?;
            Ok(Inst::MemStore { base: reg(args[0])?, index: reg(args[1])?, src: reg(args[2])? })
        }
        "jmp" => {
            want(1)?;
            match reg(args[0]) {
                Ok(r) => Ok(Inst::Jump(JumpTarget::Reg(r))),
                Err(_) => Ok(Inst::Jump(JumpTarget::Label(label(args[0])?))),
            }
        }
        "la" => {
            want(2)?;
            Ok(Inst::LoadLabel { dst: reg(args[0])?, label: label(args[1])? })
        }
        "fp+=" => {
            want(1)?;
            Ok(Inst::FrameAdjust(imm(args[0])?))
        }
        "halt" => {
            want(0)?;
            Ok(Inst::Halt)
        }
        "mark" => {
            want(1)?;
            Ok(Inst::Mark(imm(args[0])? as u32))
        }
        _ => Err(format!("unknown opcode `{op}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn text_format() {
        let src = "\
  li r1, 1
  store fv2, r1
  add r1, r2, 1
  blt r1, -3, L4
  jmp fact
  la r0, L4
L4:
  fp+= -2
  jmp r0
fact:
  halt
";
        let p = TargetProgram::parse(src).unwrap();
        assert_eq!(p.insts()[2], Inst::BinOp { op: BinOp::Add, dst: Reg(1), a: Reg(2), b: RegOrImm::Imm(1) });
        assert_eq!(p.insts()[4], Inst::Jump(JumpTarget::Label(Label::Proc(Ident::new("fact")))));
        assert_eq!(p.insts()[7], Inst::FrameAdjust(-2));
        assert_eq!(p.label_value(&Label::Local(4)), Some(0));
    }

    #[test]
    fn label_errors() {
        assert_eq!(TargetProgram::parse("jmp L1\n").unwrap_err(), AsmError::UndefinedLabel(Label::Local(1)));
        assert_eq!(TargetProgram::parse("L1:\nL1:\n").unwrap_err(), AsmError::DuplicateLabel(Label::Local(1)));
        assert!(matches!(TargetProgram::parse("frob r1\n"), Err(AsmError::Syntax { line: 1, .. })));
    }

    fn arb_reg() -> impl Strategy<Value = Reg> {
        (0u16..8).prop_map(Reg)
    }

    fn arb_inst() -> impl Strategy<Value = Inst> {
        let rim = prop_oneof![arb_reg().prop_map(RegOrImm::Reg), any::<i64>().prop_map(RegOrImm::Imm)];
        let op = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul)];
        let rel = prop_oneof![Just(Relation::Lt), Just(Relation::Le), Just(Relation::Eq), Just(Relation::Ge), Just(Relation::Gt)];
        prop_oneof![
            (arb_reg(), arb_reg()).prop_map(|(dst, src)| Inst::Move { dst, src }),
            (arb_reg(), any::<i64>()).prop_map(|(dst, imm)| Inst::LoadImm { dst, imm }),
            (arb_reg(), 0u32..9).prop_map(|(dst, s)| Inst::Load { dst, slot: Slot(s) }),
            (arb_reg(), 0u32..9).prop_map(|(src, s)| Inst::Store { slot: Slot(s), src }),
            (op, arb_reg(), arb_reg(), rim.clone()).prop_map(|(op, dst, a, b)| Inst::BinOp { op, dst, a, b }),
            (arb_reg(), arb_reg(), arb_reg()).prop_map(|(dst, base, index)| Inst::MemLoad { dst, base, index }),
            (arb_reg(), arb_reg(), arb_reg()).prop_map(|(base, index, src)| Inst::MemStore { base, index, src }),
            (rel, arb_reg(), rim).prop_map(|(rel, a, b)| Inst::CondJump { rel, a, b, target: Label::Local(0) }),
            arb_reg().prop_map(|r| Inst::Jump(JumpTarget::Reg(r))),
            Just(Inst::Jump(JumpTarget::Label(Label::Proc(Ident::new("f"))))),
            arb_reg().prop_map(|dst| Inst::LoadLabel { dst, label: Label::Local(0) }),
            any::<i32>().prop_map(|d| Inst::FrameAdjust(d as i64)),
            Just(Inst::Halt),
            (0u32..100).prop_map(Inst::Mark),
        ]
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(body in proptest::collection::vec(arb_inst(), 0..30)) {
            let mut insts = vec![Inst::LabelDef(Label::Local(0)), Inst::LabelDef(Label::Proc(Ident::new("f")))];
            insts.extend(body);
            let p = TargetProgram::new(insts).unwrap();
            prop_assert_eq!(TargetProgram::parse(&p.to_string()).unwrap(), p);
        }
    }
}
