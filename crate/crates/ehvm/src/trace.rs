//! The machine's event log. One event per line, versioned by format shape:
//!
//! ```text
//! STEP fn pc opcode
//! CHOICE n taken
//! MASK 0|1
//! UNWIND from to freed=k      (frame handles; 0 = none)
//! FAULT kind fn pc
//! ```

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Step {
        function: String,
        pc: u32,
        opcode: &'static str,
    },
    Choice {
        arity: u32,
        taken: u32,
    },
    Mask {
        value: bool,
    },
    Unwind {
        from: u32,
        to: u32,
        freed: u32,
    },
    Fault {
        kind: String,
        function: String,
        pc: u32,
    },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Step {
                function,
                pc,
                opcode,
            } => write!(f, "STEP {function} {pc} {opcode}"),
            Event::Choice { arity, taken } => write!(f, "CHOICE {arity} {taken}"),
            Event::Mask { value } => write!(f, "MASK {}", *value as u8),
            Event::Unwind { from, to, freed } => {
                write!(f, "UNWIND {from} {to} freed={freed}")
            }
            Event::Fault { kind, function, pc } => write!(f, "FAULT {kind} {function} {pc}"),
        }
    }
}

/// Render a log as newline-terminated text, the golden-file form.
pub fn render(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}
