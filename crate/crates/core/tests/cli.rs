use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SPLIT: &str = "(letrec () (set! x 1) (set! y 2) (set! z (+ y 1)) (mset! z z z)
                       (set! w (+ x y)) (mset! w w y) (return w))";

fn mts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mts")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn alloc_prints_split_code_deterministically() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "split.uil", SPLIT);
    let a = mts(&["alloc", &f, "--registers", "2"]);
    assert_eq!(a.status.code(), Some(0));
    let text = stdout(&a);
    assert!(text.contains("store fv0, r0") && text.contains("load r0, fv0"), "{text}");
    let b = mts(&["alloc", &f, "--registers", "2"]);
    assert_eq!(a.stdout, b.stdout);

    let traced = stdout(&mts(&["alloc", &f, "--registers", "2", "--trace"]));
    assert!(traced.contains("; (set! z (+ y 1))  {x:r0, y:r1}{} -> {y:r1, z:r0}{x:fv0}"), "{traced}");
}

#[test]
fn diagnostics_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "split.uil", SPLIT);
    let o = mts(&["alloc", &f, "--registers", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("register"));

    let bad = write(dir.path(), "bad.uil", "(letrec () (return y))");
    let o = mts(&["run", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.uil"));

    let syntax = write(dir.path(), "syntax.uil", "(letrec (");
    assert_eq!(mts(&["alloc", &syntax]).status.code(), Some(1));
}

#[test]
fn run_reports_traffic_and_fuel_exhaustion() {
    let dir = TempDir::new().unwrap();
    let f = write(dir.path(), "split.uil", SPLIT);
    let o = mts(&["run", &f, "--registers", "2"]);
    let text = stdout(&o);
    assert!(text.contains("ret=3") && text.contains("dynamic_loads=1") && text.contains("dynamic_stores=1"), "{text}");

    let json: serde_json::Value = serde_json::from_slice(&mts(&["run", &f, "--registers", "8", "--json"]).stdout).unwrap();
    assert_eq!(json["ret"], 3);
    assert_eq!(json["stats"]["dynamic"]["loads"], 0);
    assert_eq!(json["stats"]["static"]["stores"], 0);

    let spin = write(dir.path(), "spin.uil", "(letrec ((f (lambda (n) (set! m (+ n 1)) (f m)))) (f 0))");
    let o = mts(&["run", &spin, "--fuel", "5000"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn compare_tabulates_policies_with_the_oracle() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "split.uil", SPLIT);
    write(dir.path(), "calm.uil", "(letrec () (set! a 1) (set! b (+ a 1)) (return b))");
    let d = dir.path().display().to_string();
    let o = mts(&["compare", &d, "--registers-list", "2,3", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2 * 2 * 3);
    for r in rows {
        if r["policy"] == "furthest" {
            assert_eq!(r["dynamic"]["loads"], r["belady"]);
        }
        if r["program"].as_str().unwrap().ends_with("calm.uil") {
            assert_eq!(r["dynamic"]["loads"], 0);
            assert_eq!(r["dynamic"]["stores"], 0);
        }
    }
    let table = stdout(&mts(&["compare", &d]));
    assert!(table.contains("belady") && table.contains("total"), "{table}");

    write(dir.path(), "broken.uil", "(letrec () (return q))");
    let o = mts(&["compare", &d]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("split.uil"), "other files are still compared");
}

#[test]
fn fuzz_passes_and_reports_injected_faults() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().display().to_string();
    let o = mts(&["fuzz", "--count", "0", "--out-dir", &out]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("programs=0"));

    let o = mts(&["fuzz", "--count", "25", "--seed", "9", "--out-dir", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("failures=0"));

    let o = mts(&["fuzz", "--count", "2", "--seed", "40", "--out-dir", &out, "--inject-fault"]);
    assert_eq!(o.status.code(), Some(2));
    let repro = dir.path().join("fuzz-40.uil");
    let text = fs::read_to_string(&repro).unwrap();
    assert!(text.starts_with("; seed 40"));
    // the reproducer is itself a valid program
    let again = mts(&["run", repro.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0));
}
