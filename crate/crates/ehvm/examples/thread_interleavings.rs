//! Scheduler enumeration: two threads race on a shared cell, and the
//! explorer visits every interleaving of their visible effects. Holding the
//! interrupt mask collapses the race.
//!
//! Run with: cargo run --example thread_interleavings

use ehvm::explorer::{explore, ExploreOptions};
use ehvm::ir::parse_module;

const RACY: &str = "
global @cell = [0]

fn @main() {
entry:
  %w = const @worker
  %t1 = call @__vm_spawn(%w, 1)
  %t2 = call @__vm_spawn(%w, 2)
  ret 0
}

fn @worker(%v) {
entry:
  store %v, @cell
  store %v, @cell
  ret 0
}
";

const ATOMIC: &str = "
global @cell = [0]

fn @main() {
entry:
  %w = const @worker
  %t1 = call @__vm_spawn(%w, 1)
  %t2 = call @__vm_spawn(%w, 2)
  ret 0
}

fn @worker(%v) {
entry:
  %old = call @__vm_mask(1)
  store %v, @cell
  store %v, @cell
  call @__vm_mask(%old)
  ret 0
}
";

fn main() {
    let racy = parse_module(RACY).unwrap();
    let report = explore(&racy, &ExploreOptions::default()).unwrap();
    println!("two stores per thread, no mask: {} interleavings", report.executions);

    let atomic = parse_module(ATOMIC).unwrap();
    let report = explore(&atomic, &ExploreOptions::default()).unwrap();
    println!("same stores inside an atomic section: {} interleaving(s)", report.executions);
}
