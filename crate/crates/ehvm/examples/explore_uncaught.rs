//! An uncaught exception has two legal behaviors: report without unwinding,
//! or run every cleanup first. The explorer enumerates both.
//!
//! Run with: cargo run --example explore_uncaught

use ehvm::ehpass::run_pass;
use ehvm::explorer::{explore, replay, ExploreOptions};
use ehvm::ir::parse_module;
use ehvm::trace::Event;

const PROGRAM: &str = "
typeinfo @Err

fn @main() personality @__ehvm_personality_v0 {
entry:
  call @open_file()
  ret 0
}

fn @open_file() personality @__ehvm_personality_v0 {
entry:
  %handle = alloca 1
  store 3, %handle
  invoke @read_file(%handle) to %done unwind %cleanup
done:
  ret
cleanup:
  %lp = landingpad cleanup
  call @close_file(%handle)
  resume %lp
}

fn @close_file(%handle) {
entry:
  ret
}

fn @read_file(%handle) {
entry:
  %e = call @__cxa_allocate_exception(1)
  store 1, %e
  call @__cxa_throw(%e, @Err, 0)
}
";

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let lowered = run_pass(&module).unwrap();
    let report = explore(&lowered, &ExploreOptions::default()).unwrap();

    println!("executions: {}", report.executions);
    for (outcome, count) in &report.outcomes {
        println!("  {outcome} x{count}");
    }

    // Replay each branch and show whether the destructor ran.
    if let Some((trace, _)) = &report.first_counterexample {
        println!("first counterexample decisions:\n{trace}");
    }
    for taken in 0..2u32 {
        let trace = ehvm::explorer::ChoiceTrace {
            decisions: vec![ehvm::explorer::Decision { arity: 2, taken }],
        };
        let r = replay(&lowered, &trace, false).unwrap();
        let closed = r.events.iter().any(
            |e| matches!(e, Event::Step { function, .. } if function == "@close_file"),
        );
        println!(
            "branch {taken}: close_file {}",
            if closed { "ran" } else { "did not run" }
        );
    }
}
