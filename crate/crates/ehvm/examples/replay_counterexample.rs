//! Counterexample reproduction: explore a faulting program, take the
//! recorded decision trace, and replay it to the identical event log.
//!
//! Run with: cargo run --example replay_counterexample

use ehvm::ehpass::run_pass;
use ehvm::explorer::{explore, replay, ExploreOptions};
use ehvm::ir::parse_module;
use ehvm::trace::render;

const PROGRAM: &str = "
fn @main() {
entry:
  %p = call @malloc(1)
  %failed = eq %p, 0
  condbr %failed, %oops, %fine
fine:
  store 1, %p
  call @free(%p)
  ret 0
oops:
  trap
}
";

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let lowered = run_pass(&module).unwrap();
    let opts = ExploreOptions {
        fault_injection: true,
        ..Default::default()
    };
    let report = explore(&lowered, &opts).unwrap();
    println!("executions: {}", report.executions);
    for (outcome, count) in &report.outcomes {
        println!("  {outcome} x{count}");
    }

    let Some((trace, original_log)) = report.first_counterexample else {
        println!("no counterexample found");
        return;
    };
    println!("counterexample decisions (id arity taken):\n{trace}");

    let replayed = replay(&lowered, &trace, true).unwrap();
    assert_eq!(render(&original_log), render(&replayed.events));
    println!("replayed log is byte-identical; last lines:");
    for line in render(&replayed.events).lines().rev().take(3).collect::<Vec<_>>().iter().rev() {
        println!("  {line}");
    }
}
