//! Turning a simultaneous register permutation into a sequence of moves.

use std::collections::BTreeSet;

use mts_regalloc::allocator::{sequentialize, MoveSource};
use mts_regalloc::model::{Location, Reg, Slot};

fn reg(i: u16) -> Location {
    Location::Reg(Reg(i))
}

fn show(title: &str, moves: &[(MoveSource, Location)], registers: usize, busy: &[u16]) {
    let busy: BTreeSet<Reg> = busy.iter().map(|&r| Reg(r)).collect();
    let insts = sequentialize(moves, registers, &busy, 0).unwrap();
    println!("{title}:");
    for i in insts {
        println!("  {i}");
    }
}

fn main() {
    // r0 -> r1 -> r2 -> r0, with r3 free to break the cycle
    let cycle = [(MoveSource::from(Reg(0)), reg(1)), (Reg(1).into(), reg(2)), (Reg(2).into(), reg(0))];
    show("three-cycle with a free register", &cycle, 4, &[]);
    show("three-cycle with every register busy", &cycle, 3, &[]);
    show("tree of copies", &[(Reg(0).into(), reg(1)), (Reg(0).into(), reg(2)), (Reg(1).into(), reg(3))], 4, &[]);
    show("slot reload and immediate", &[(Slot(0).into(), reg(0)), (MoveSource::Imm(7), reg(1))], 2, &[]);
}
