//! Class-hierarchy matching: an object of the most-derived type of a
//! diamond is caught by a clause naming the virtual base — the corner case
//! that trips up hand-rolled RTTI reimplementations.
//!
//! Run with: cargo run --example diamond_catch

use ehvm::cxxrt::match_type;
use ehvm::ehpass::run_pass;
use ehvm::ir::parse_module;
use ehvm::machine::{Machine, MachineOptions, Outcome};

const PROGRAM: &str = "
typeinfo @IoError
typeinfo @ReadError : @IoError
typeinfo @WriteError : @IoError
typeinfo @PipeError : @ReadError, @WriteError

fn @main() personality @__ehvm_personality_v0 {
entry:
  %r = invoke @pump() to %done unwind %pad
done:
  ret 0
pad:
  %lp = landingpad catch @IoError
  %exc = gep %lp, 0
  %p = call @__cxa_begin_catch(%exc)
  %v = load %p
  call @__cxa_end_catch()
  ret %v
}

fn @pump() {
entry:
  %e = call @__cxa_allocate_exception(1)
  store 17, %e
  call @__cxa_throw(%e, @PipeError, 0)
}
";

fn main() {
    let module = parse_module(PROGRAM).unwrap();

    // The matching rule itself, directly:
    let reg = &module.typeinfos;
    let pipe = reg.id_of("@PipeError").unwrap();
    let io = reg.id_of("@IoError").unwrap();
    println!("PipeError -> IoError reachable: {}", match_type(reg, pipe, io));
    println!("IoError -> PipeError reachable: {}", match_type(reg, io, pipe));

    // And end to end through the lowered pipeline:
    let lowered = run_pass(&module).unwrap();
    let result = Machine::run(&lowered, &MachineOptions::default()).unwrap();
    match result.outcome {
        Outcome::Halted(code) => println!("caught; handler returned {code}"),
        Outcome::Fault(f) => println!("fault: {f}"),
    }
}
