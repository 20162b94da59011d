//! Ending sets and next-use distances computed by the analysis pass.

use mts_regalloc::analysis::annotate;
use mts_regalloc::uil::parse;

fn main() {
    let p = parse(include_str!("uil/liveness.uil")).unwrap();
    let ap = annotate(&p);
    print!("{}", ap.entry.dump());
    println!();
    for s in ap.entry.statements() {
        let live: Vec<String> = ap.entry.next_use.live_after(s.point).map(|v| v.to_string()).collect();
        println!("after point {}: live {{{}}}", s.point.0, live.join(", "));
    }
}
