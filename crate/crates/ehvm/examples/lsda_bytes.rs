//! Build a language-specific data area by hand, encode it to bytes, decode
//! it back, and look up a call site.
//!
//! Run with: cargo run --example lsda_bytes

use ehvm::lsda::{ActionEntry, CallSiteRecord, LsdaTable};

fn main() {
    let table = LsdaTable {
        // one invoke at pc 4 whose landing pad sits at pc 9
        callsites: vec![
            CallSiteRecord { start: 2, length: 1, landing_pad: 0, action: 0 },
            CallSiteRecord { start: 4, length: 1, landing_pad: 9, action: 1 },
        ],
        // catch type 1, then a cleanup, chained with relative offsets
        actions: vec![
            ActionEntry { type_filter: 1, next: 1 },
            ActionEntry { type_filter: 0, next: 0 },
        ],
        types: vec![7],
        specs: vec![vec![7, 9]],
    };
    table.validate().expect("table is well-formed");

    let bytes = table.encode();
    print!("encoded {} bytes:", bytes.len());
    for b in &bytes {
        print!(" {b:02x}");
    }
    println!();

    let decoded = LsdaTable::decode(&bytes).expect("round trip");
    assert_eq!(decoded, table);
    println!("decode(encode(t)) == t");

    for pc in [2u32, 3, 4] {
        match table.find_callsite(pc) {
            Some(cs) => println!(
                "pc {pc}: call site start={} pad={} action={}",
                cs.start, cs.landing_pad, cs.action
            ),
            None => println!("pc {pc}: no call site"),
        }
    }

    let chain: Vec<i32> = table.chain(1).map(|e| e.type_filter).collect();
    println!("action chain from 1: {chain:?}");
}
