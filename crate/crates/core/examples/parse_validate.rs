//! Parse a program, print it back, and show what the validator rejects.

use mts_regalloc::uil::{parse, validate};

fn main() {
    let p = parse(include_str!("uil/fact.uil")).expect("fact.uil parses");
    println!("{p}");
    println!("diagnostics: {}", validate(&p).len());

    for src in [
        "(letrec () (set! a (+ b 1)) (return a))",
        "(letrec ((f (lambda (x) (return x)))) (set! y (f 1 2)) (return y))",
        "(letrec () (set! a 1))",
    ] {
        let p = parse(src).unwrap();
        for d in validate(&p) {
            println!("{src}\n  {d}");
        }
    }
    for src in ["(letrec () (set! a (+ 1 2 3)))", "(letrec ((f (lambda (x) (return x))) (f (lambda () (return 0)))) (f 1))"] {
        println!("{src}\n  parse error: {}", parse(src).unwrap_err());
    }
}
