//! Lower and execute a throw/catch program, printing the full event trace:
//! the unwind, the mask hand-offs and every step along the way.
//!
//! Run with: cargo run --example run_catch

use ehvm::ehpass::run_pass;
use ehvm::ir::parse_module;
use ehvm::machine::{Machine, MachineOptions, Outcome};
use ehvm::trace::render;

const PROGRAM: &str = "
typeinfo @Overdraft

fn @main() personality @__ehvm_personality_v0 {
entry:
  %r = invoke @withdraw(120) to %done unwind %pad
done:
  ret 0
pad:
  %lp = landingpad catch @Overdraft
  %exc = gep %lp, 0
  %amount = call @__cxa_begin_catch(%exc)
  %v = load %amount
  call @__cxa_end_catch()
  ret %v
}

fn @withdraw(%amount) {
entry:
  %over = lt 100, %amount
  condbr %over, %refuse, %allow
allow:
  ret 0
refuse:
  %e = call @__cxa_allocate_exception(1)
  store %amount, %e
  call @__cxa_throw(%e, @Overdraft, 0)
}
";

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let lowered = run_pass(&module).unwrap();
    let result = Machine::run(&lowered, &MachineOptions::default()).unwrap();

    print!("{}", render(&result.events));
    match result.outcome {
        Outcome::Halted(code) => println!("halted {code}"),
        Outcome::Fault(f) => println!("fault: {f}"),
    }
    println!(
        "handlers entered: {:?}",
        result
            .stats
            .handler_log
            .iter()
            .map(|h| (h.function.as_str(), h.selector))
            .collect::<Vec<_>>()
    );
    println!(
        "heap census at exit: {} allocas, {} exceptions",
        result.census.alloca, result.census.exception
    );
}
