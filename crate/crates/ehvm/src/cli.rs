//! The `ehvm` command line: parse → validate → pass → run/explore/dump.
//!
//! Exit codes: 0 success / no fault, 1 verification fault found, 2
//! exploration bound exhausted, 3 usage, parse or validation error.

use crate::explorer::{self, ExploreOptions};
use crate::ir::{self, ModuleIR};
use crate::lsda::LsdaTable;
use crate::machine::{Machine, MachineOptions, Outcome};
use crate::{ehpass, trace};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAULT: i32 = 1;
pub const EXIT_BOUND: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Parser)]
#[command(name = "ehvm", about = "A linked-frame VM for exploring zero-cost exception handling", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Lower, then execute one deterministic run (first branch everywhere).
    Run {
        input: PathBuf,
        /// Allocations may fail nondeterministically (first branch = success).
        #[arg(long)]
        fault_injection: bool,
        /// Print the event log to standard output.
        #[arg(long)]
        trace: bool,
        /// Report still-live heap objects at a clean exit as a fault.
        #[arg(long)]
        check_leaks: bool,
    },
    /// Lower, then enumerate every execution over the choice points.
    Explore {
        input: PathBuf,
        /// Explore both outcomes of every guarded allocation.
        #[arg(long)]
        fault_injection: bool,
        /// Stop after this many executions.
        #[arg(long, value_name = "N")]
        max_exec: Option<u64>,
        /// Write the first counterexample's decision trace to a file.
        #[arg(long, value_name = "FILE")]
        trace_out: Option<PathBuf>,
    },
    /// Run the exception-lowering pass and print the transformed module.
    Pass {
        input: PathBuf,
        /// Output file (standard output when absent).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Decode and print one function's language-specific data area.
    LsdaDump { input: PathBuf, function: String },
    /// Parse and validate a module, printing diagnostics.
    Validate { input: PathBuf },
}

pub fn run_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap renders its own help/version output
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("ehvm: {msg}");
            EXIT_USAGE
        }
    }
}

fn load(path: &Path) -> Result<ModuleIR, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let module = ir::parse_module(&text).map_err(|e| format!("{}:{e}", path.display()))?;
    Ok(module)
}

fn load_valid(path: &Path) -> Result<ModuleIR, String> {
    let module = load(path)?;
    let diags = ir::validate(&module);
    if !diags.is_empty() {
        let lines: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(lines.join("\n"));
    }
    Ok(module)
}

fn dispatch(cli: Cli) -> Result<i32, String> {
    match cli.cmd {
        Cmd::Run {
            input,
            fault_injection,
            trace: want_trace,
            check_leaks,
        } => {
            let module = load_valid(&input)?;
            let lowered = ehpass::run_pass(&module).map_err(|e| e.to_string())?;
            let opts = MachineOptions {
                fault_injection,
                report_leaks: check_leaks,
                ..Default::default()
            };
            let result = Machine::run(&lowered, &opts).map_err(|e| e.to_string())?;
            if want_trace {
                print!("{}", trace::render(&result.events));
            }
            match result.outcome {
                Outcome::Halted(code) => {
                    println!("halted {code}");
                    Ok(EXIT_OK)
                }
                Outcome::Fault(f) => {
                    println!("fault {} at {} pc {}: {}", f.kind, f.function, f.pc, f.message);
                    Ok(EXIT_FAULT)
                }
            }
        }
        Cmd::Explore {
            input,
            fault_injection,
            max_exec,
            trace_out,
        } => {
            let module = load_valid(&input)?;
            let lowered = ehpass::run_pass(&module).map_err(|e| e.to_string())?;
            let opts = ExploreOptions {
                fault_injection,
                max_executions: max_exec,
                ..Default::default()
            };
            let report = explorer::explore(&lowered, &opts).map_err(|e| e.to_string())?;
            println!("executions {}", report.executions);
            for (key, count) in &report.outcomes {
                println!("outcome {key} count={count}");
            }
            if report.bound_exhausted {
                println!("bound exhausted");
            }
            if let Some((trace, _)) = &report.first_counterexample {
                println!("counterexample decisions {}", trace.decisions.len());
                if let Some(path) = &trace_out {
                    std::fs::write(path, format!("# ehvm choice trace v1\n{trace}"))
                        .map_err(|e| format!("{}: {e}", path.display()))?;
                    println!("counterexample written to {}", path.display());
                }
            }
            if report.fault_found() {
                Ok(EXIT_FAULT)
            } else if report.bound_exhausted {
                Ok(EXIT_BOUND)
            } else {
                Ok(EXIT_OK)
            }
        }
        Cmd::Pass { input, output } => {
            let module = load_valid(&input)?;
            let lowered = ehpass::run_pass(&module).map_err(|e| e.to_string())?;
            let text = lowered.print();
            match output {
                Some(path) => std::fs::write(&path, text)
                    .map_err(|e| format!("{}: {e}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(EXIT_OK)
        }
        Cmd::LsdaDump { input, function } => {
            let module = load_valid(&input)?;
            let lowered = ehpass::run_pass(&module).map_err(|e| e.to_string())?;
            let name = if function.starts_with('@') {
                function
            } else {
                format!("@{function}")
            };
            let Some(f) = lowered.function(&name) else {
                return Err(format!("no function {name}"));
            };
            print!("{}", dump_lsda(&lowered, f.lsda_ref.as_deref(), &name)?);
            Ok(EXIT_OK)
        }
        Cmd::Validate { input } => {
            let module = load(&input)?;
            let diags = ir::validate(&module);
            if diags.is_empty() {
                println!("ok");
                Ok(EXIT_OK)
            } else {
                for d in &diags {
                    println!("{d}");
                }
                Ok(EXIT_USAGE)
            }
        }
    }
}

/// Stable text form of a decoded LSDA, one record per line.
pub fn dump_lsda(
    module: &ModuleIR,
    lsda_ref: Option<&str>,
    function: &str,
) -> Result<String, String> {
    use std::fmt::Write;
    let mut out = String::new();
    let Some(gname) = lsda_ref else {
        writeln!(out, "lsda {function} none").unwrap();
        return Ok(out);
    };
    let Some(global) = module.global(gname) else {
        return Err(format!("{function}: lsda global {gname} missing"));
    };
    let table = LsdaTable::decode(&global.bytes).map_err(|e| e.to_string())?;
    writeln!(out, "lsda {function} version 1 bytes={}", global.bytes.len()).unwrap();
    for (i, cs) in table.callsites.iter().enumerate() {
        writeln!(
            out,
            "callsite {i}: start={} length={} pad={} action={}",
            cs.start, cs.length, cs.landing_pad, cs.action
        )
        .unwrap();
    }
    for (i, a) in table.actions.iter().enumerate() {
        writeln!(
            out,
            "action {}: filter={} next={}",
            i + 1,
            a.type_filter,
            a.next
        )
        .unwrap();
    }
    for (i, t) in table.types.iter().enumerate() {
        let name = if *t == 0 {
            "any"
        } else {
            module.typeinfos.name_of(*t).unwrap_or("?")
        };
        writeln!(out, "type {}: {}", i + 1, name).unwrap();
    }
    for (i, spec) in table.specs.iter().enumerate() {
        let names: Vec<&str> = spec
            .iter()
            .map(|t| module.typeinfos.name_of(*t).unwrap_or("?"))
            .collect();
        writeln!(out, "spec -{}: [{}]", i + 1, names.join(", ")).unwrap();
    }
    Ok(out)
}
