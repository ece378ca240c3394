//! Non-local control transfer with setjmp/longjmp: the jump removes three
//! frames, frees their locals, and makes the original setjmp call return
//! again with a new value.
//!
//! Run with: cargo run --example setjmp_longjmp

use ehvm::ir::parse_module;
use ehvm::machine::{Machine, MachineOptions, Outcome};
use ehvm::trace::Event;

const PROGRAM: &str = "
fn @main() {
entry:
  %env = alloca 2
  %r = call @setjmp(%env)
  %first_time = eq %r, 0
  condbr %first_time, %descend, %landed
descend:
  %x = call @level1(%env)
  ret 99
landed:
  ret %r
}

fn @level1(%env) {
entry:
  %a = alloca 1
  %x = call @level2(%env)
  ret %x
}

fn @level2(%env) {
entry:
  %b = alloca 1
  %x = call @level3(%env)
  ret %x
}

fn @level3(%env) {
entry:
  %c = alloca 1
  call @longjmp(%env, 7)
}
";

fn main() {
    let module = parse_module(PROGRAM).unwrap();
    let result = Machine::run(&module, &MachineOptions::default()).unwrap();

    match &result.outcome {
        Outcome::Halted(code) => println!("setjmp returned {code} the second time"),
        Outcome::Fault(f) => println!("fault: {f}"),
    }
    for e in &result.events {
        if let Event::Unwind { from, to, freed } = e {
            println!("unwound frames {from}..{to}, freed {freed} local allocation(s)");
        }
    }
    println!(
        "census at exit: {} allocas live, {} frames live",
        result.census.alloca, result.frames_live
    );
}
