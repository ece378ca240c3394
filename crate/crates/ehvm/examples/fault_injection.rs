//! Allocation fault injection: under `fault_injection` every `malloc` may
//! nondeterministically return null, and the explorer visits every
//! combination of failures.
//!
//! Run with: cargo run --example fault_injection

use ehvm::ehpass::run_pass;
use ehvm::explorer::{explore, ExploreOptions};
use ehvm::ir::parse_module;

const PROGRAM: &str = "
fn @main() {
entry:
  %a = call @try_alloc()
  %b = call @try_alloc()
  %c = call @try_alloc()
  %failures = add %a, %b
  %total = add %failures, %c
  ret %total
}

fn @try_alloc() {
entry:
  %p = call @malloc(4)
  %failed = eq %p, 0
  condbr %failed, %bail, %use
use:
  store 1, %p
  call @free(%p)
  ret 0
bail:
  ret 1
}
";

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let lowered = run_pass(&module).unwrap();

    let plain = explore(&lowered, &ExploreOptions::default()).unwrap();
    println!("without fault injection: {} execution(s)", plain.executions);

    let opts = ExploreOptions {
        fault_injection: true,
        ..Default::default()
    };
    let report = explore(&lowered, &opts).unwrap();
    println!("with fault injection: {} executions", report.executions);
    for (outcome, count) in &report.outcomes {
        println!("  {outcome} x{count}");
    }
    // The exit code counts failed allocations: 0..=3 failures over 8 runs.
}
