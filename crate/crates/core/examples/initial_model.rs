//! The model a procedure body starts from under the calling convention.

use mts_regalloc::model::{MachineConfig, Model};
use mts_regalloc::uil::Ident;

fn main() {
    let params: Vec<Ident> = ["a", "b", "c", "d", "e", "f"].into_iter().map(Ident::new).collect();
    for r in [2, 3, 5, 8] {
        let cfg = MachineConfig::with_registers(r).unwrap();
        for n in [0, 2, 6] {
            println!("R={r} params={n}: {}", Model::initial(&params[..n], &cfg));
        }
    }
}
