//! Parse an EHIR module, validate it, and print its canonical form.
//!
//! Run with: cargo run --example parse_and_validate

use ehvm::ir::{parse_module, validate};

const PROGRAM: &str = "
typeinfo @Base
typeinfo @Derived : @Base

fn @main() personality @__ehvm_personality_v0 {
entry:
  %r = invoke @work(3) to %done unwind %oops
done:
  ret %r
oops:
  %lp = landingpad catch @Base
  ret 1
}

fn @work(%n) {
entry:
  %m = add %n, 4
  ret %m
}
";

fn main() {
    let module = match parse_module(PROGRAM) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("parse error at {e}");
            std::process::exit(1);
        }
    };
    let diagnostics = validate(&module);
    if diagnostics.is_empty() {
        println!("; module is well-formed");
    }
    for d in &diagnostics {
        println!("; {d}");
    }
    print!("{}", module.print());

    // The printer is a fixed point: printing the reparse gives the same text.
    let reparsed = parse_module(&module.print()).unwrap();
    assert_eq!(module.print(), reparsed.print());
}
