//! Show what the exception-lowering pass does to a module: LSDA constants
//! appear, `typeid.for` queries become integers, `resume` becomes a call of
//! the runtime Resume.
//!
//! Run with: cargo run --example lowering_pass

use ehvm::ehpass::run_pass;
use ehvm::ir::parse_module;
use ehvm::lsda::LsdaTable;

const PROGRAM: &str = "
typeinfo @A
typeinfo @B

fn @main() personality @__ehvm_personality_v0 {
entry:
  %r = invoke @risky() to %done unwind %pad
done:
  ret %r
pad:
  %lp = landingpad catch @A catch @B cleanup
  %sel = gep %lp, 1
  %a = call @typeid.for(@A)
  %is_a = eq %sel, %a
  condbr %is_a, %ha, %other
ha:
  ret 1
other:
  resume %lp
}

fn @risky() {
entry:
  ret 0
}
";

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let lowered = run_pass(&module).unwrap();

    println!("=== before ===");
    print!("{}", module.print());
    println!("=== after ===");
    print!("{}", lowered.print());

    let g = lowered.global("@__lsda.main").unwrap();
    let table = LsdaTable::decode(&g.bytes).unwrap();
    println!("=== decoded @__lsda.main ===");
    println!("call sites: {}", table.callsites.len());
    for cs in &table.callsites {
        println!("  start={} length={} pad={} action={}", cs.start, cs.length, cs.landing_pad, cs.action);
    }
    let chain: Vec<i32> = table
        .chain(table.callsites[0].action)
        .map(|e| e.type_filter)
        .collect();
    println!("invoke's action chain (catch @A, catch @B, cleanup): {chain:?}");
}
