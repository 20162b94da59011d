//! Generate random programs, allocate them under every policy, and check the
//! machine code against the reference interpreter.

use mts_regalloc::cli::{cmd_fuzz, FuzzOptions, Injection, RunConfig};

fn main() {
    let out_dir = std::env::temp_dir().join("mts-fuzz-example");
    std::fs::create_dir_all(&out_dir).unwrap();
    let rc = RunConfig { seed: 1, ..RunConfig::default() };

    let report = cmd_fuzz(&rc, &FuzzOptions { count: 200, out_dir: out_dir.clone(), inject: None }).unwrap();
    print!("{}", report.summary());

    println!("with a deliberate miscompilation:");
    let report = cmd_fuzz(&rc, &FuzzOptions { count: 3, out_dir, inject: Some(Injection::CorruptResult) }).unwrap();
    print!("{}", report.summary());
}
