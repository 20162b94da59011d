use std::collections::BTreeMap;

use proptest::prelude::*;

use mts_regalloc::allocator::{alloc_program, alloc_stmt, compile, shuffle, AllocConfig, Ctx, MoveSource, Policy, Value};
use mts_regalloc::analysis::annotate;
use mts_regalloc::cli::{fuzz_heaps, fuzz_program};
use mts_regalloc::gen::{generate, GenConfig};
use mts_regalloc::machine::{cosimulate, equivalent, run_target, run_uil, seed_heap, Inst, RegOrImm, TargetProgram, Verdict};
use mts_regalloc::model::{Location, MachineConfig, Model, Reg, Slot, Var};
use mts_regalloc::uil::{parse, BinOp};

fn machine(r: usize) -> MachineConfig {
    MachineConfig::with_registers(r).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn models_agree_with_the_interpreter_at_every_checkpoint(seed in 0u64..1_000_000, r in 3usize..=6, pol in 0usize..3) {
        let p = fuzz_program(seed);
        let ap = annotate(&p);
        let mut cfg = AllocConfig::new(machine(r), Policy::ALL[pol]);
        cfg.instrument = true;
        let a = alloc_program(&ap, &cfg).unwrap();
        let heap = seed_heap(seed, 64);
        cosimulate(&ap, &a, &cfg.machine, &heap, 1_000_000).map_err(|e| TestCaseError::fail(format!("{e}\n{p}")))?;
    }

    #[test]
    fn generated_programs_stay_equivalent_without_preferences(seed in 0u64..1_000_000, r in 2usize..=8) {
        let p = fuzz_program(seed);
        let mut cfg = AllocConfig::new(machine(r), Policy::Furthest);
        cfg.preferences = false;
        match compile(&p, &cfg) {
            Ok(a) => {
                let v = equivalent(&p, &a.program, &cfg.machine, &fuzz_heaps(seed), 1_000_000)
                    .map_err(|d| TestCaseError::fail(format!("{d}\n{p}")))?;
                prop_assert!(v.iter().all(|v| *v == Verdict::Equivalent));
            }
            // two registers cannot hold three distinct store operands
            Err(e) => prop_assert!(r == 2, "{e}"),
        }
    }

    #[test]
    fn allocation_is_deterministic(seed in 0u64..1_000_000) {
        let p = fuzz_program(seed);
        let cfg = AllocConfig::new(machine(3), Policy::Lifo);
        let a = compile(&p, &cfg).unwrap();
        let b = compile(&p, &cfg).unwrap();
        prop_assert_eq!(a.program.to_string(), b.program.to_string());
        prop_assert_eq!(a.traced_listing(), b.traced_listing());
        let heap = seed_heap(seed, 64);
        prop_assert_eq!(run_target(&a.program, &cfg.machine, &heap, 1_000_000).unwrap(), run_target(&b.program, &cfg.machine, &heap, 1_000_000).unwrap());
    }

    #[test]
    fn listings_round_trip_through_the_text_format(seed in 0u64..1_000_000) {
        let p = fuzz_program(seed);
        let a = compile(&p, &AllocConfig::new(machine(4), Policy::Furthest)).unwrap();
        let text = a.program.to_string();
        let back = TargetProgram::parse(&text).unwrap();
        prop_assert_eq!(back.insts(), a.program.insts());
    }
}

#[test]
fn spill_free_at_eight_registers() {
    let p = parse(
        "(letrec ((add3 (lambda (a b c) (set! s (+ a b)) (set! t (+ s c)) (return t))))
                     (set! x 1) (set! y 2) (set! z (add3 x y 3)) (return z))",
    )
    .unwrap();
    let cfg = machine(8);
    let a = compile(&p, &AllocConfig::new(cfg.clone(), Policy::Furthest)).unwrap();
    let run = run_target(&a.program, &cfg, &[], 1000).unwrap();
    assert_eq!(run.observation.ret, 6);
    assert_eq!((run.stats.static_counts.loads, run.stats.static_counts.stores), (0, 0));
}

#[test]
fn recursion_saves_call_lives_and_restores_the_frame() {
    let src = "(letrec ((fib (lambda (n)
                 (if (< n 2)
                   (begin (return n))
                   (begin (set! a (- n 1)) (set! x (fib a)) (set! b (- n 2)) (set! y (fib b))
                          (set! r (+ x y)) (return r))))))
               (fib 15))";
    let p = parse(src).unwrap();
    for r in [2, 3, 4, 8] {
        let cfg = machine(r);
        for policy in Policy::ALL {
            let a = compile(&p, &AllocConfig::new(cfg.clone(), policy)).unwrap();
            let run = run_target(&a.program, &cfg, &[], 10_000_000).unwrap();
            assert_eq!(run.observation.ret, 610, "R={r} {policy}");
            assert_eq!(run.frame_mismatches, 0);
            assert!(run.calls_returned > 1000);
        }
    }
    assert_eq!(run_uil(&p, &[], 10_000_000).unwrap().ret, 610);
}

#[test]
fn stack_arguments_beyond_the_argument_registers() {
    let src = "(letrec ((sum5 (lambda (a b c d e) (set! s (+ a b)) (set! s (+ s c)) (set! s (+ s d)) (set! s (+ s e)) (return s))))
                 (set! x 10) (set! y (sum5 1 2 3 4 x)) (set! z (+ y x)) (return z))";
    let p = parse(src).unwrap();
    for r in [2, 3, 4, 6] {
        let cfg = machine(r);
        let a = compile(&p, &AllocConfig::new(cfg.clone(), Policy::Furthest)).unwrap();
        assert_eq!(run_target(&a.program, &cfg, &[], 10_000).unwrap().observation.ret, 30, "R={r}");
    }
}

#[test]
fn single_statement_transformer() {
    let p = parse("(letrec () (set! x 1) (set! y (+ x 2)) (return y))").unwrap();
    let ap = annotate(&p);
    let cfg = AllocConfig::new(machine(2), Policy::Furthest);
    let stmts = ap.entry.statements();
    let m = Model::new().bind_reg(Var::named("x"), Reg(1)).unwrap();
    let out = alloc_stmt(stmts[1], &m, Ctx::NonTail, &ap.entry, &BTreeMap::new(), &cfg).unwrap();
    // x dies here, so y reuses its register
    assert_eq!(out.insts, vec![Inst::BinOp { op: BinOp::Add, dst: Reg(1), a: Reg(1), b: RegOrImm::Imm(2) }]);
    assert_eq!(out.value, Value::Loc(Location::Reg(Reg(1))));
    assert_eq!(out.model.to_string(), "{y:r1}{}");

    let err = alloc_stmt(
        &annotate(&parse("(letrec () (g 1))").unwrap()).entry.statements()[0].clone(),
        &Model::new(),
        Ctx::Tail,
        &ap.entry,
        &BTreeMap::new(),
        &cfg,
    )
    .unwrap_err();
    assert!(err.to_string().contains("undefined procedure"), "{err}");
}

#[test]
fn public_shuffle_keeps_occupied_registers() {
    let m = Model::new()
        .bind_reg(Var::named("a"), Reg(0))
        .unwrap()
        .bind_reg(Var::named("b"), Reg(1))
        .unwrap()
        .bind_reg(Var::named("keep"), Reg(2))
        .unwrap();
    let moves = vec![
        (MoveSource::Loc(Location::Reg(Reg(0))), Location::Reg(Reg(1))),
        (MoveSource::Loc(Location::Reg(Reg(1))), Location::Reg(Reg(0))),
    ];
    let (after, insts) = shuffle(&m, &moves, 3).unwrap();
    assert_eq!(after.reg_of(&Var::named("a")), Some(Reg(1)));
    assert_eq!(after.reg_of(&Var::named("b")), Some(Reg(0)));
    assert_eq!(after.reg_of(&Var::named("keep")), Some(Reg(2)));
    // r2 is occupied, so the swap goes through a scratch slot
    assert!(insts.iter().all(|i| i.writes() != Some(Reg(2))));
    assert!(insts.iter().any(|i| matches!(i, Inst::Store { slot: Slot(0), .. })));
}

#[test]
fn lifo_adversarial_corpus_favors_furthest() {
    let cfg = GenConfig::lifo_adversarial();
    let (mut furthest, mut lifo) = (0, 0);
    for seed in 0..100 {
        let p = generate(&cfg, seed);
        for r in [2, 3] {
            let m = machine(r);
            for (policy, total) in [(Policy::Furthest, &mut furthest), (Policy::Lifo, &mut lifo)] {
                let a = compile(&p, &AllocConfig::new(m.clone(), policy)).unwrap();
                *total += run_target(&a.program, &m, &seed_heap(seed, 64), 10_000).unwrap().stats.dynamic.memory();
            }
        }
    }
    assert!(furthest < lifo, "furthest {furthest}, lifo {lifo}");
}

#[test]
fn entry_tail_call_halts_with_the_callee_result() {
    let p = parse("(letrec ((f (lambda (a) (set! b (* a a)) (return b)))) (set! x 7) (f x))").unwrap();
    let cfg = machine(3);
    let a = compile(&p, &AllocConfig::new(cfg.clone(), Policy::Furthest)).unwrap();
    assert_eq!(run_target(&a.program, &cfg, &[], 1000).unwrap().observation.ret, 49);
    assert_eq!(a.program.insts().iter().filter(|i| **i == Inst::Halt).count(), 1);
}
