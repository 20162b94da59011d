//! The commands behind the `mts` binary, as plain functions that return
//! their output so they can be tested and embedded.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::allocator::{compile, AllocConfig, AllocError, Allocation, Policy};
use crate::gen::{generate, GenConfig};
use crate::machine::belady::{belady_oracle, within_bounds};
use crate::machine::{equivalent, run_target, seed_heap, FaultKind, Inst, TargetProgram, Traffic, Verdict, DEFAULT_FUEL};
use crate::model::MachineConfig;
use crate::uil::{parse, validate, Program};

/// Words in the heap every command runs against.
pub const HEAP_WORDS: usize = 64;
/// Register counts the fuzzer checks each program at.
pub const FUZZ_REGISTERS: [usize; 3] = [3, 4, 8];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub registers: usize,
    pub policy: Policy,
    pub preferences: bool,
    pub trace: bool,
    pub fuel: u64,
    pub seed: u64,
    pub json: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { registers: 4, policy: Policy::Furthest, preferences: true, trace: false, fuel: DEFAULT_FUEL, seed: 0, json: false }
    }
}

impl RunConfig {
    pub fn alloc_config(&self) -> Result<AllocConfig, CliError> {
        let machine = MachineConfig::with_registers(self.registers).map_err(|e| CliError::Diagnostics(e.to_string()))?;
        let mut cfg = AllocConfig::new(machine, self.policy);
        cfg.preferences = self.preferences;
        Ok(cfg)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    /// The input is malformed or cannot be allocated at this register count.
    #[error("{0}")]
    Diagnostics(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("{0}")]
    OutOfFuel(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Diagnostics(_) | CliError::Io(_) => 1,
            CliError::Internal(_) => 2,
            CliError::OutOfFuel(_) => 3,
        }
    }
}

impl From<AllocError> for CliError {
    fn from(e: AllocError) -> Self {
        match e {
            AllocError::Internal(_) | AllocError::Shuffle(_) | AllocError::Model(_) => CliError::Internal(e.to_string()),
            _ => CliError::Diagnostics(e.to_string()),
        }
    }
}

/// Parse and validate source text, naming `origin` in diagnostics.
pub fn load_source(text: &str, origin: &str) -> Result<Program, CliError> {
    let p = parse(text).map_err(|e| CliError::Diagnostics(format!("{origin}: {e}")))?;
    let ds = validate(&p);
    if !ds.is_empty() {
        let lines: Vec<String> = ds.iter().map(|d| format!("{origin}: {d}")).collect();
        return Err(CliError::Diagnostics(lines.join("\n")));
    }
    Ok(p)
}

pub fn load_file(path: &Path) -> Result<Program, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Diagnostics(format!("{}: {e}", path.display())))?;
    load_source(&text, &path.display().to_string())
}

/// Assembly for `p`, with model transitions interleaved under `--trace`.
pub fn cmd_alloc(p: &Program, rc: &RunConfig) -> Result<String, CliError> {
    let a = compile(p, &rc.alloc_config()?)?;
    Ok(if rc.trace { a.traced_listing() } else { a.program.to_string() })
}

#[derive(Clone, Debug, Serialize)]
struct RunReport<'a> {
    ret: i64,
    writes: &'a [(i64, i64)],
    stats: crate::machine::TrafficStats,
}

/// Allocate, simulate on the seeded heap, and report the result and traffic.
pub fn cmd_run(p: &Program, rc: &RunConfig) -> Result<String, CliError> {
    let cfg = rc.alloc_config()?;
    let a = compile(p, &cfg)?;
    let heap = seed_heap(rc.seed, HEAP_WORDS);
    let run = match run_target(&a.program, &cfg.machine, &heap, rc.fuel) {
        Ok(run) => run,
        Err(e) if e.kind == FaultKind::OutOfFuel => {
            return Err(CliError::OutOfFuel(format!("execution exhausted its fuel of {} steps", rc.fuel)))
        }
        Err(e) => return Err(CliError::Diagnostics(format!("execution faulted: {e}"))),
    };
    let obs = &run.observation;
    if rc.json {
        let r = RunReport { ret: obs.ret, writes: &obs.writes, stats: run.stats };
        return serde_json::to_string_pretty(&r).map_err(|e| CliError::Internal(e.to_string()));
    }
    let mut out = String::new();
    let _ = writeln!(out, "ret={}", obs.ret);
    let writes: Vec<String> = obs.writes.iter().map(|(a, v)| format!("{a}:{v}")).collect();
    let _ = writeln!(out, "writes={}", writes.join(","));
    let _ = writeln!(out, "{}", run.stats);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CompareRow {
    pub program: String,
    pub registers: usize,
    pub policy: Policy,
    pub dynamic: Traffic,
    /// Fewest loads any eviction order achieves, for programs small enough
    /// to search.
    pub belady: Option<u64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub errors: Vec<String>,
}

impl CompareReport {
    /// Dynamic traffic summed over every row for `policy`.
    pub fn total(&self, policy: Policy) -> Traffic {
        let mut t = Traffic::default();
        for r in self.rows.iter().filter(|r| r.policy == policy) {
            t.loads += r.dynamic.loads;
            t.stores += r.dynamic.stores;
            t.moves += r.dynamic.moves;
            t.instructions += r.dynamic.instructions;
        }
        t
    }

    pub fn render(&self, policies: &[Policy]) -> String {
        let w = self.rows.iter().map(|r| r.program.len()).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = writeln!(out, "{:<w$} {:>3} {:<8} {:>7} {:>7} {:>7} {:>7}", "program", "R", "policy", "loads", "stores", "moves", "belady");
        for r in &self.rows {
            let b = r.belady.map_or("-".to_string(), |b| b.to_string());
            let _ = writeln!(
                out,
                "{:<w$} {:>3} {:<8} {:>7} {:>7} {:>7} {:>7}",
                r.program, r.registers, r.policy, r.dynamic.loads, r.dynamic.stores, r.dynamic.moves, b
            );
        }
        for &pol in policies {
            let t = self.total(pol);
            let _ = writeln!(out, "{:<w$} {:>3} {:<8} {:>7} {:>7} {:>7}", "total", "", pol, t.loads, t.stores, t.moves);
        }
        out
    }
}

/// `.uil` files named directly or found directly inside a named directory.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> =
                fs::read_dir(p)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|f| f.extension().is_some_and(|x| x == "uil")).collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Dynamic traffic of `p` at each register count and policy. Programs that
/// fail are reported and skipped.
pub fn compare_programs(programs: &[(String, Program)], registers: &[usize], policies: &[Policy], rc: &RunConfig) -> CompareReport {
    let mut report = CompareReport::default();
    let heap = seed_heap(rc.seed, HEAP_WORDS);
    for (name, p) in programs {
        for &r in registers {
            let belady = within_bounds(p, r).then(|| belady_oracle(p, r).ok()).flatten();
            for &policy in policies {
                let rc = RunConfig { registers: r, policy, ..rc.clone() };
                let result = rc.alloc_config().and_then(|cfg| {
                    let a = compile(p, &cfg)?;
                    run_target(&a.program, &cfg.machine, &heap, rc.fuel).map_err(|e| CliError::Diagnostics(e.to_string()))
                });
                match result {
                    Ok(run) => {
                        report.rows.push(CompareRow { program: name.clone(), registers: r, policy, dynamic: run.stats.dynamic, belady })
                    }
                    Err(e) => report.errors.push(format!("{name} at R={r} under {policy}: {e}")),
                }
            }
        }
    }
    report
}

pub fn cmd_compare(
    paths: &[PathBuf],
    registers: &[usize],
    policies: &[Policy],
    rc: &RunConfig,
) -> Result<(String, CompareReport), CliError> {
    let mut programs = Vec::new();
    let mut errors = Vec::new();
    for f in collect_inputs(paths)? {
        match load_file(&f) {
            Ok(p) => programs.push((f.display().to_string(), p)),
            Err(e) => errors.push(e.to_string()),
        }
    }
    let mut report = compare_programs(&programs, registers, policies, rc);
    errors.append(&mut report.errors);
    report.errors = errors;
    let text = if rc.json {
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?
    } else {
        report.render(policies)
    };
    Ok((text, report))
}

/// A deliberate miscompilation, to check that the fuzzer notices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Injection {
    /// Add one to the return value just before the machine halts.
    CorruptResult,
}

impl Injection {
    fn apply(self, a: &Allocation, cfg: &MachineConfig) -> Result<TargetProgram, CliError> {
        let r = cfg.ret_val_reg;
        let mut out = Vec::new();
        for i in a.program.insts() {
            if *i == Inst::Halt {
                out.push(Inst::BinOp { op: crate::uil::BinOp::Add, dst: r, a: r, b: crate::machine::RegOrImm::Imm(1) });
            }
            out.push(i.clone());
        }
        TargetProgram::new(out).map_err(|e| CliError::Internal(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct FuzzOptions {
    pub count: u64,
    /// Where reproducers are written.
    pub out_dir: PathBuf,
    pub inject: Option<Injection>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FuzzFailure {
    pub seed: u64,
    pub registers: usize,
    pub policy: Policy,
    pub message: String,
    pub reproducer: PathBuf,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FuzzReport {
    pub programs: u64,
    /// (program, R, policy, heap) combinations that agreed.
    pub equivalent: u64,
    pub inconclusive: u64,
    pub failures: Vec<FuzzFailure>,
}

impl FuzzReport {
    pub fn summary(&self) -> String {
        let mut out = format!(
            "programs={} equivalent={} inconclusive={} failures={}\n",
            self.programs,
            self.equivalent,
            self.inconclusive,
            self.failures.len()
        );
        for f in &self.failures {
            let _ = writeln!(out, "FAIL seed={} R={} policy={} -> {}", f.seed, f.registers, f.policy, f.reproducer.display());
        }
        out
    }
}

/// The program the fuzzer derives from `seed`.
pub fn fuzz_program(seed: u64) -> Program {
    let pressure = FUZZ_REGISTERS[(seed % FUZZ_REGISTERS.len() as u64) as usize];
    generate(&GenConfig::general().with_pressure(pressure), seed)
}

/// Heaps each fuzzed program runs against.
pub fn fuzz_heaps(seed: u64) -> Vec<Vec<i64>> {
    vec![seed_heap(seed, HEAP_WORDS), seed_heap(seed ^ 0x5eed, HEAP_WORDS)]
}

fn check(p: &Program, seed: u64, r: usize, policy: Policy, rc: &RunConfig, inject: Option<Injection>) -> Result<Vec<Verdict>, String> {
    let rc = RunConfig { registers: r, policy, ..rc.clone() };
    let cfg = rc.alloc_config().map_err(|e| e.to_string())?;
    let a = compile(p, &cfg).map_err(|e| format!("allocation failed: {e}"))?;
    let tp = match inject {
        Some(i) => i.apply(&a, &cfg.machine).map_err(|e| e.to_string())?,
        None => a.program,
    };
    equivalent(p, &tp, &cfg.machine, &fuzz_heaps(seed), rc.fuel).map_err(|d| d.to_string())
}

/// Check `opts.count` generated programs, starting at seed `rc.seed`, at
/// every register count in [`FUZZ_REGISTERS`] under every policy.
pub fn cmd_fuzz(rc: &RunConfig, opts: &FuzzOptions) -> Result<FuzzReport, CliError> {
    let mut report = FuzzReport::default();
    for seed in rc.seed..rc.seed + opts.count {
        let p = fuzz_program(seed);
        report.programs += 1;
        'configs: for r in FUZZ_REGISTERS {
            for policy in Policy::ALL {
                match check(&p, seed, r, policy, rc, opts.inject) {
                    Ok(vs) => {
                        for v in vs {
                            match v {
                                Verdict::Equivalent => report.equivalent += 1,
                                Verdict::Inconclusive => report.inconclusive += 1,
                            }
                        }
                    }
                    Err(message) => {
                        fs::create_dir_all(&opts.out_dir)?;
                        let reproducer = opts.out_dir.join(format!("fuzz-{seed}.uil"));
                        let mut text = format!("; seed {seed}, {r} registers, {policy}\n");
                        for line in message.lines() {
                            let _ = writeln!(text, "; {line}");
                        }
                        let _ = writeln!(text, "{p}");
                        fs::write(&reproducer, text)?;
                        report.failures.push(FuzzFailure { seed, registers: r, policy, message, reproducer });
                        break 'configs;
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Diagnostics(String::new()).exit_code(), 1);
        assert_eq!(CliError::Internal(String::new()).exit_code(), 2);
        assert_eq!(CliError::OutOfFuel(String::new()).exit_code(), 3);
    }

    #[test]
    fn diagnostics_name_the_origin() {
        let e = load_source("(letrec () (return x))", "t.uil").unwrap_err();
        assert!(e.to_string().starts_with("t.uil: "), "{e}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn one_register_is_a_pressure_diagnostic() {
        let p = load_source("(letrec () (set! x 1) (set! y (+ x x)) (return y))", "t").unwrap();
        let e = cmd_alloc(&p, &RunConfig { registers: 1, ..RunConfig::default() }).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }
}
