//! Dynamic traffic of each eviction policy on the sample programs, next to
//! the minimum reload count found by exhaustive search where it applies.

use std::path::PathBuf;

use mts_regalloc::allocator::Policy;
use mts_regalloc::cli::{collect_inputs, compare_programs, load_file, RunConfig};

fn main() {
    let dir = PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/uil"));
    let programs: Vec<_> = collect_inputs(&[dir])
        .unwrap()
        .into_iter()
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), load_file(&f).unwrap()))
        .collect();
    let report = compare_programs(&programs, &[2, 3, 4], &Policy::ALL, &RunConfig::default());
    print!("{}", report.render(&Policy::ALL));
    assert!(report.errors.is_empty());
}
