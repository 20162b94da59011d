//! Parallel moves between locations, sequentialized.
//!
//! A mapping is a set of simultaneous copies with distinct destinations. It
//! decomposes into paths, emitted leaf-first so no value is overwritten
//! before it is read, and loops, each broken by parking one value in a
//! temporary. A loop over `n` locations costs `n + 1` instructions.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::machine::Inst;
use crate::model::{Location, Model, Reg, Slot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MoveSource {
    Loc(Location),
    Imm(i64),
}

impl From<Location> for MoveSource {
    fn from(l: Location) -> Self {
        MoveSource::Loc(l)
    }
}

impl From<Reg> for MoveSource {
    fn from(r: Reg) -> Self {
        MoveSource::Loc(Location::Reg(r))
    }
}

impl From<Slot> for MoveSource {
    fn from(s: Slot) -> Self {
        MoveSource::Loc(Location::Slot(s))
    }
}

/// Simultaneous copies `src -> dst`. Destinations must be distinct; sources
/// may repeat.
pub type MoveMapping = Vec<(MoveSource, Location)>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShuffleError {
    #[error("{0} is the destination of more than one move")]
    DuplicateDestination(Location),
}

struct Sequencer {
    registers: usize,
    busy: BTreeSet<Reg>,
    /// dst -> src, identity moves excluded.
    pending: BTreeMap<Location, MoveSource>,
    /// Locations holding their final value.
    settled: BTreeSet<Location>,
    next_scratch: u32,
    out: Vec<Inst>,
}

impl Sequencer {
    fn is_pending_source(&self, l: Location) -> bool {
        self.pending.values().any(|s| *s == MoveSource::Loc(l))
    }

    /// A register whose current contents nobody needs.
    fn free_reg(&self) -> Option<Reg> {
        (0..self.registers as u16).map(Reg).find(|&r| {
            let l = Location::Reg(r);
            !self.busy.contains(&r) && !self.settled.contains(&l) && !self.pending.contains_key(&l) && !self.is_pending_source(l)
        })
    }

    fn scratch(&mut self) -> Slot {
        self.next_scratch += 1;
        Slot(self.next_scratch - 1)
    }

    /// Route a value into slot `dst` through some register, borrowing one
    /// (saved and restored around the copy) when none is free.
    fn via_register(&mut self, dst: Slot, fill: impl Fn(Reg) -> Inst) {
        match self.free_reg() {
            Some(r) => {
                self.out.push(fill(r));
                self.out.push(Inst::Store { slot: dst, src: r });
            }
            None => {
                let r = Reg(0);
                let save = self.scratch();
                self.out.push(Inst::Store { slot: save, src: r });
                self.out.push(fill(r));
                self.out.push(Inst::Store { slot: dst, src: r });
                self.out.push(Inst::Load { dst: r, slot: save });
            }
        }
    }

    fn emit(&mut self, src: MoveSource, dst: Location) {
        use Location::{Reg as R, Slot as S};
        match (src, dst) {
            (MoveSource::Loc(R(a)), R(b)) => self.out.push(Inst::Move { dst: b, src: a }),
            (MoveSource::Loc(R(a)), S(s)) => self.out.push(Inst::Store { slot: s, src: a }),
            (MoveSource::Loc(S(s)), R(b)) => self.out.push(Inst::Load { dst: b, slot: s }),
            (MoveSource::Loc(S(s)), S(t)) => self.via_register(t, |r| Inst::Load { dst: r, slot: s }),
            (MoveSource::Imm(n), R(b)) => self.out.push(Inst::LoadImm { dst: b, imm: n }),
            (MoveSource::Imm(n), S(t)) => self.via_register(t, |r| Inst::LoadImm { dst: r, imm: n }),
        }
    }

    /// A pending move whose destination no other pending move still reads.
    /// Copies from locations go before immediates.
    fn ready(&self) -> Option<Location> {
        let blocked: BTreeSet<Location> = self
            .pending
            .values()
            .filter_map(|s| match s {
                MoveSource::Loc(l) => Some(*l),
                MoveSource::Imm(_) => None,
            })
            .collect();
        let mut ready = self.pending.iter().filter(|(d, _)| !blocked.contains(d));
        let mut imm = None;
        for (d, s) in &mut ready {
            match s {
                MoveSource::Loc(_) => return Some(*d),
                MoveSource::Imm(_) => imm = imm.or(Some(*d)),
            }
        }
        imm
    }

    /// Locations of one loop, in the order values flow around it.
    fn find_loop(&self) -> Vec<Location> {
        let start = *self.pending.keys().next().expect("called with pending moves");
        let reader_of = |l: Location| {
            self.pending
                .iter()
                .find(|(_, s)| **s == MoveSource::Loc(l))
                .map(|(d, _)| *d)
                .expect("every pending destination is still read when nothing is ready")
        };
        let mut seen = vec![start];
        let mut cur = start;
        loop {
            cur = reader_of(cur);
            if let Some(i) = seen.iter().position(|&l| l == cur) {
                return seen.split_off(i);
            }
            seen.push(cur);
        }
    }

    fn break_loop(&mut self) {
        let cycle = self.find_loop();
        let succ = |i: usize| cycle[(i + 1) % cycle.len()];
        let is_reg = |l: Location| matches!(l, Location::Reg(_));
        // Park a register whose value heads to a register when possible, so
        // the parked value never needs a slot-to-slot copy to get out again.
        let park = (0..cycle.len())
            .find(|&i| is_reg(cycle[i]) && is_reg(succ(i)))
            .or_else(|| (0..cycle.len()).find(|&i| is_reg(cycle[i])))
            .map_or(cycle[0], |i| cycle[i]);
        let temp = match self.free_reg() {
            Some(r) => Location::Reg(r),
            None => Location::Slot(self.scratch()),
        };
        self.emit(MoveSource::Loc(park), temp);
        for s in self.pending.values_mut() {
            if *s == MoveSource::Loc(park) {
                *s = MoveSource::Loc(temp);
            }
        }
    }

    fn run(mut self) -> Vec<Inst> {
        while !self.pending.is_empty() {
            match self.ready() {
                Some(d) => {
                    let s = self.pending.remove(&d).expect("ready destination is pending");
                    self.emit(s, d);
                    self.settled.insert(d);
                }
                None => self.break_loop(),
            }
        }
        self.out
    }
}

/// Sequentialize `moves`. Registers in `busy` are never used as temporaries;
/// any other register not named by the mapping may be clobbered, and
/// temporary slots are allocated from `scratch_base` upward.
pub fn sequentialize(
    moves: &[(MoveSource, Location)],
    registers: usize,
    busy: &BTreeSet<Reg>,
    scratch_base: u32,
) -> Result<Vec<Inst>, ShuffleError> {
    let mut pending = BTreeMap::new();
    let mut settled = BTreeSet::new();
    let mut dsts = BTreeSet::new();
    let mut floor = scratch_base;
    for &(s, d) in moves {
        if !dsts.insert(d) {
            return Err(ShuffleError::DuplicateDestination(d));
        }
        for l in [Some(d), if let MoveSource::Loc(l) = s { Some(l) } else { None }].into_iter().flatten() {
            if let Location::Slot(x) = l {
                floor = floor.max(x.0 + 1);
            }
        }
        if s == MoveSource::Loc(d) {
            settled.insert(d);
        } else {
            pending.insert(d, s);
        }
    }
    let seq = Sequencer { registers, busy: busy.clone(), pending, settled, next_scratch: floor, out: Vec::new() };
    Ok(seq.run())
}

/// Realize `moves` as simultaneous copies starting from model `m`. Registers
/// occupied in `m` are left intact unless the mapping names them. In the
/// returned model, each variable whose location is a source takes the
/// corresponding destination as its new register or slot binding.
pub fn shuffle(m: &Model, moves: &[(MoveSource, Location)], registers: usize) -> Result<(Model, Vec<Inst>), ShuffleError> {
    let insts = sequentialize(moves, registers, &m.used_regs(), m.slot_extent())?;
    let mut out = m.clone();
    for (_, d) in moves {
        if let Some(v) = m.occupant(*d) {
            out = match d {
                Location::Reg(_) => out.unbind_reg(v),
                Location::Slot(_) => out.unbind_slot(v),
            };
        }
    }
    for (s, d) in moves {
        if let MoveSource::Loc(l) = s {
            if let Some(v) = m.occupant(*l) {
                out = out.bind(v.clone(), *d).expect("destinations are distinct and were cleared");
            }
        }
    }
    Ok((out, insts))
}
