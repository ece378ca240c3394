//! A desk-scale virtual machine and toolchain for zero-cost exception
//! handling: a tiny exception-aware IR, a byte-exact LSDA encoding, the
//! lowering pass that attaches it, a linked-frame machine, a two-phase
//! unwinder with a class-hierarchy personality, and an explorer for the
//! nondeterministic behaviors that exception handling exposes (uncaught
//! duality, allocation fault injection, thread interleavings).
//!
//! Start from the runnable examples (`cargo run --example run_catch`) or the
//! `ehvm` binary (`ehvm run prog.ehir`).

pub mod builtins;
pub mod cli;
pub mod cxxrt;
pub mod ehpass;
pub mod explorer;
pub mod ir;
pub mod lsda;
pub mod machine;
pub mod trace;
pub mod unwind;
