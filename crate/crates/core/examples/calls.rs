//! Procedure calls: argument registers, values saved across non-tail calls,
//! stack arguments, and tail calls that reuse the frame.

use mts_regalloc::allocator::{compile, AllocConfig, Policy};
use mts_regalloc::machine::{run_target, run_uil, seed_heap};
use mts_regalloc::model::MachineConfig;
use mts_regalloc::uil::parse;

fn main() {
    let sources = [
        ("fact", include_str!("uil/fact.uil")),
        ("fib", include_str!("uil/fib.uil")),
        ("loop", include_str!("uil/loop.uil")),
        (
            "stack arguments",
            "(letrec ((sum6 (lambda (a b c d e f) (set! s (+ a b)) (set! s (+ s c)) (set! s (+ s d))
                                               (set! s (+ s e)) (set! s (+ s f)) (return s))))
               (set! z (sum6 1 2 3 4 5 6)) (return z))",
        ),
    ];
    let heap = seed_heap(3, 64);
    for (name, src) in sources {
        let p = parse(src).unwrap();
        let expect = run_uil(&p, &heap, 10_000_000).unwrap().ret;
        println!("{name}: interpreter returns {expect}");
        for r in [2, 4, 8] {
            let cfg = AllocConfig::new(MachineConfig::with_registers(r).unwrap(), Policy::Furthest);
            let a = compile(&p, &cfg).unwrap();
            let run = run_target(&a.program, &cfg.machine, &heap, 10_000_000).unwrap();
            assert_eq!(run.observation.ret, expect);
            println!(
                "  R={r}: {} instructions, {} calls returned, {} dynamic loads, {} dynamic stores",
                a.program.insts().len(),
                run.calls_returned,
                run.stats.dynamic.loads,
                run.stats.dynamic.stores
            );
        }
    }
    let p = parse(include_str!("uil/fact.uil")).unwrap();
    let cfg = AllocConfig::new(MachineConfig::with_registers(3).unwrap(), Policy::Furthest);
    println!("\nfact at R=3:\n{}", compile(&p, &cfg).unwrap().program);
}
