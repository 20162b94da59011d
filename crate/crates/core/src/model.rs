//! The compile-time machine model: where every live variable currently sits.
//!
//! A model is two injective maps, one for the register file and one for the
//! stack frame. A variable may appear in both at once (multi-homing), which is
//! what lets a later spill skip its store. Models are values: every operation
//! returns a new model and leaves the input untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::uil::Ident;

/// Physical register index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(pub u16);

/// Frame slot `fv_i`, an offset from the frame pointer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot(pub u32);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fv{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    Reg(Reg),
    Slot(Slot),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Reg(r) => r.fmt(f),
            Location::Slot(s) => s.fmt(f),
        }
    }
}

/// Anything the model can bind: source variables, operand temporaries, and
/// the return address.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Id(Ident),
    Temp(u32),
    Ret,
}

impl Var {
    pub fn named(s: &str) -> Var {
        Var::Id(Ident::new(s))
    }
}

impl From<Ident> for Var {
    fn from(i: Ident) -> Self {
        Var::Id(i)
    }
}

impl From<&Ident> for Var {
    fn from(i: &Ident) -> Self {
        Var::Id(i.clone())
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Id(i) => i.fmt(f),
            Var::Temp(n) => write!(f, "%t{n}"),
            Var::Ret => f.write_str(crate::uil::RESERVED_RET),
        }
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("register count {0} is below the minimum of 2")]
    TooFewRegisters(usize),
    #[error("register r{0} is out of range for a {1}-register machine")]
    OutOfRange(u16, usize),
    #[error("argument registers, and the return-address register, must be distinct")]
    Overlap,
}

/// Register file size and calling convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineConfig {
    pub registers: usize,
    pub arg_regs: Vec<Reg>,
    pub ret_addr_reg: Reg,
    pub ret_val_reg: Reg,
}

/// Argument registers used by [`MachineConfig::with_registers`] at most.
pub const MAX_ARG_REGS: usize = 4;

impl MachineConfig {
    /// `r0` holds the return address, `r1` the return value, and arguments go
    /// in `r1..` up to [`MAX_ARG_REGS`] registers.
    pub fn with_registers(registers: usize) -> Result<Self, ConfigError> {
        let n_args = registers.saturating_sub(1).min(MAX_ARG_REGS);
        let arg_regs = (1..=n_args as u16).map(Reg).collect();
        Self::new(registers, arg_regs, Reg(0), Reg(1))
    }

    pub fn new(registers: usize, arg_regs: Vec<Reg>, ret_addr_reg: Reg, ret_val_reg: Reg) -> Result<Self, ConfigError> {
        if registers < 2 {
            return Err(ConfigError::TooFewRegisters(registers));
        }
        for r in arg_regs.iter().chain([&ret_addr_reg, &ret_val_reg]) {
            if r.0 as usize >= registers {
                return Err(ConfigError::OutOfRange(r.0, registers));
            }
        }
        let distinct: BTreeSet<_> = arg_regs.iter().chain([&ret_addr_reg]).collect();
        if distinct.len() != arg_regs.len() + 1 || ret_val_reg == ret_addr_reg {
            return Err(ConfigError::Overlap);
        }
        Ok(MachineConfig { registers, arg_regs, ret_addr_reg, ret_val_reg })
    }

    pub fn regs(&self) -> impl Iterator<Item = Reg> {
        (0..self.registers as u16).map(Reg)
    }

    /// Where argument `i` of a call is passed, given the slot offset at which
    /// outgoing stack arguments begin.
    pub fn arg_location(&self, i: usize, stack_base: u32) -> Location {
        match self.arg_regs.get(i) {
            Some(&r) => Location::Reg(r),
            None => Location::Slot(Slot(stack_base + (i - self.arg_regs.len()) as u32)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("variable `{0}` is not bound in the model")]
    Unbound(Var),
    #[error("{loc} is already occupied by `{occupant}`")]
    Occupied { loc: Location, occupant: Var },
}

#[derive(Debug, Clone, Copy)]
struct RegBinding {
    reg: Reg,
    /// Logical time the binding was made; drives LIFO/FIFO victim choice.
    stamp: u64,
}

/// Equality compares bindings only; binding timestamps are policy metadata.
#[derive(Clone, Default)]
pub struct Model {
    regs: BTreeMap<Var, RegBinding>,
    slots: BTreeMap<Var, Slot>,
    clock: u64,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.slots == other.slots
            && self.regs.len() == other.regs.len()
            && self.regs.iter().zip(&other.regs).all(|((a, x), (b, y))| a == b && x.reg == y.reg)
    }
}

impl Eq for Model {}

impl Model {
    pub fn new() -> Self {
        Model::default()
    }

    /// The model at procedure entry: as many parameters as fit in argument
    /// registers, the rest in slots `fv0, fv1, ...`, and RET in the
    /// return-address register.
    pub fn initial(params: &[Ident], cfg: &MachineConfig) -> Self {
        let mut m = Model::new();
        for (i, p) in params.iter().enumerate() {
            m = match cfg.arg_location(i, 0) {
                Location::Reg(r) => m.bind_reg(Var::from(p), r),
                Location::Slot(s) => m.bind_slot(Var::from(p), s),
            }
            .expect("parameters are distinct");
        }
        m.bind_reg(Var::Ret, cfg.ret_addr_reg).expect("RET register is not an argument register")
    }

    /// Register binding if present, otherwise the slot binding.
    pub fn whereis(&self, v: &Var) -> Result<Location, ModelError> {
        self.reg_of(v).map(Location::Reg).or_else(|| self.slot_of(v).map(Location::Slot)).ok_or_else(|| ModelError::Unbound(v.clone()))
    }

    pub fn reg_of(&self, v: &Var) -> Option<Reg> {
        self.regs.get(v).map(|b| b.reg)
    }

    pub fn slot_of(&self, v: &Var) -> Option<Slot> {
        self.slots.get(v).copied()
    }

    pub fn stamp_of(&self, v: &Var) -> Option<u64> {
        self.regs.get(v).map(|b| b.stamp)
    }

    pub fn contains(&self, v: &Var) -> bool {
        self.regs.contains_key(v) || self.slots.contains_key(v)
    }

    pub fn occupant_of_reg(&self, r: Reg) -> Option<&Var> {
        self.regs.iter().find(|(_, b)| b.reg == r).map(|(v, _)| v)
    }

    pub fn occupant_of_slot(&self, s: Slot) -> Option<&Var> {
        self.slots.iter().find(|(_, &x)| x == s).map(|(v, _)| v)
    }

    pub fn occupant(&self, loc: Location) -> Option<&Var> {
        match loc {
            Location::Reg(r) => self.occupant_of_reg(r),
            Location::Slot(s) => self.occupant_of_slot(s),
        }
    }

    /// Every bound variable, in key order.
    pub fn vars(&self) -> BTreeSet<Var> {
        self.regs.keys().chain(self.slots.keys()).cloned().collect()
    }

    pub fn register_bindings(&self) -> impl Iterator<Item = (&Var, Reg)> {
        self.regs.iter().map(|(v, b)| (v, b.reg))
    }

    pub fn slot_bindings(&self) -> impl Iterator<Item = (&Var, Slot)> {
        self.slots.iter().map(|(v, s)| (v, *s))
    }

    pub fn is_empty(&self) -> bool {
        self.regs.is_empty() && self.slots.is_empty()
    }

    /// Bind `v` to `r`, replacing any previous register binding of `v`.
    pub fn bind_reg(&self, v: Var, r: Reg) -> Result<Model, ModelError> {
        if let Some(occupant) = self.occupant_of_reg(r) {
            if occupant != &v {
                return Err(ModelError::Occupied { loc: Location::Reg(r), occupant: occupant.clone() });
            }
        }
        let mut m = self.clone();
        m.clock += 1;
        m.regs.insert(v, RegBinding { reg: r, stamp: m.clock });
        Ok(m)
    }

    /// Bind `v` to `s`, replacing any previous slot binding of `v`.
    pub fn bind_slot(&self, v: Var, s: Slot) -> Result<Model, ModelError> {
        if let Some(occupant) = self.occupant_of_slot(s) {
            if occupant != &v {
                return Err(ModelError::Occupied { loc: Location::Slot(s), occupant: occupant.clone() });
            }
        }
        let mut m = self.clone();
        m.slots.insert(v, s);
        Ok(m)
    }

    pub fn bind(&self, v: Var, loc: Location) -> Result<Model, ModelError> {
        match loc {
            Location::Reg(r) => self.bind_reg(v, r),
            Location::Slot(s) => self.bind_slot(v, s),
        }
    }

    pub fn unbind_reg(&self, v: &Var) -> Model {
        let mut m = self.clone();
        m.regs.remove(v);
        m
    }

    pub fn unbind_slot(&self, v: &Var) -> Model {
        let mut m = self.clone();
        m.slots.remove(v);
        m
    }

    /// Remove every binding of every variable in `vs`.
    pub fn drop_vars<'a>(&self, vs: impl IntoIterator<Item = &'a Var>) -> Model {
        let mut m = self.clone();
        for v in vs {
            m.regs.remove(v);
            m.slots.remove(v);
        }
        m
    }

    /// Keep only the variables in `keep`.
    pub fn restrict(&self, keep: &BTreeSet<Var>) -> Model {
        let mut m = self.clone();
        m.regs.retain(|v, _| keep.contains(v));
        m.slots.retain(|v, _| keep.contains(v));
        m
    }

    pub fn used_regs(&self) -> BTreeSet<Reg> {
        self.regs.values().map(|b| b.reg).collect()
    }

    /// Lowest-index register that no variable occupies and that is not in
    /// `exclude`.
    pub fn free_register(&self, cfg: &MachineConfig, exclude: &BTreeSet<Reg>) -> Option<Reg> {
        let used = self.used_regs();
        cfg.regs().find(|r| !used.contains(r) && !exclude.contains(r))
    }

    /// Lowest slot offset no variable occupies.
    pub fn free_slot(&self) -> Slot {
        let used: BTreeSet<u32> = self.slots.values().map(|s| s.0).collect();
        Slot((0..).find(|i| !used.contains(i)).expect("slot offsets are unbounded"))
    }

    /// One past the highest occupied slot.
    pub fn slot_extent(&self) -> u32 {
        self.slots.values().map(|s| s.0 + 1).max().unwrap_or(0)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let regs: Vec<_> = self.regs.iter().map(|(v, b)| format!("{v}:{}", b.reg)).collect();
        let slots: Vec<_> = self.slots.iter().map(|(v, s)| format!("{v}:{s}")).collect();
        write!(f, "{{{}}}{{{}}}", regs.join(", "), slots.join(", "))
    }
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
