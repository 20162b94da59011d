//! A variable is evicted under pressure and reloaded into a different
//! register, with the allocator's model printed after every statement.

use mts_regalloc::allocator::{compile, AllocConfig, Policy};
use mts_regalloc::machine::{run_target, seed_heap};
use mts_regalloc::model::MachineConfig;
use mts_regalloc::uil::parse;

fn main() {
    let p = parse(include_str!("uil/split.uil")).unwrap();
    for r in [2, 3] {
        let cfg = AllocConfig::new(MachineConfig::with_registers(r).unwrap(), Policy::Furthest);
        let a = compile(&p, &cfg).unwrap();
        println!("R={r}");
        print!("{}", a.traced_listing());
        let run = run_target(&a.program, &cfg.machine, &seed_heap(0, 64), 1000).unwrap();
        println!("ret={} loads={} stores={}\n", run.observation.ret, run.stats.dynamic.loads, run.stats.dynamic.stores);
    }
}
