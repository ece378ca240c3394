//! Depth-first enumeration of every execution over the program's choice
//! points (scheduling, allocation fault injection, the uncaught-exception
//! duality), with deterministic replay of any recorded branch.
//!
//! There is no state hashing or merging: each branch re-executes the program
//! from the start under a scripted decision prefix, so the observable is the
//! execution tree of a terminating program.

use crate::ir::ModuleIR;
use crate::machine::{
    BranchOrder, Machine, MachineError, MachineOptions, Outcome, RunResult,
};
use crate::trace::Event;
use std::collections::BTreeMap;
use std::fmt;

/// One recorded decision: arity offered, branch taken. The choice id is the
/// position in the list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub arity: u32,
    pub taken: u32,
}

/// A full assignment to the choice points of one execution; replaying it
/// reproduces the identical event log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChoiceTrace {
    pub decisions: Vec<Decision>,
}

impl fmt::Display for ChoiceTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, d) in self.decisions.iter().enumerate() {
            writeln!(f, "{id} {} {}", d.arity, d.taken)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExploreOptions {
    pub fault_injection: bool,
    pub max_executions: Option<u64>,
    pub branch_order: BranchOrder,
}

#[derive(Debug, Clone)]
pub struct ExplorationReport {
    pub executions: u64,
    /// Terminal outcomes as a multiset keyed by "halted(c)" / "fault(kind)".
    pub outcomes: BTreeMap<String, u64>,
    pub first_counterexample: Option<(ChoiceTrace, Vec<Event>)>,
    pub bound_exhausted: bool,
}

impl ExplorationReport {
    pub fn fault_found(&self) -> bool {
        self.first_counterexample.is_some()
    }
}

pub fn outcome_key(o: &Outcome) -> String {
    match o {
        Outcome::Halted(c) => format!("halted({c})"),
        Outcome::Fault(f) => format!("fault({})", f.kind),
    }
}

/// Enumerate all executions depth-first, up to the bound.
pub fn explore(module: &ModuleIR, opts: &ExploreOptions) -> Result<ExplorationReport, MachineError> {
    let mopts = MachineOptions {
        fault_injection: opts.fault_injection,
        report_leaks: false,
        branch_order: opts.branch_order,
    };
    let mut report = ExplorationReport {
        executions: 0,
        outcomes: BTreeMap::new(),
        first_counterexample: None,
        bound_exhausted: false,
    };
    let mut prefix: Vec<u32> = Vec::new();
    loop {
        let mut m = Machine::with_script(module, &mopts, prefix.clone(), None)?;
        let r = m.run_to_end()?;
        report.executions += 1;
        *report.outcomes.entry(outcome_key(&r.outcome)).or_insert(0) += 1;
        if matches!(r.outcome, Outcome::Fault(_)) && report.first_counterexample.is_none() {
            let trace = ChoiceTrace {
                decisions: r
                    .decisions
                    .iter()
                    .map(|&(arity, taken)| Decision { arity, taken })
                    .collect(),
            };
            report.first_counterexample = Some((trace, r.events.clone()));
        }

        // Backtrack: deepest decision with an untried sibling branch.
        let log = &r.decisions;
        let mut next = None;
        for i in (0..log.len()).rev() {
            let (arity, taken) = log[i];
            let sibling = match opts.branch_order {
                BranchOrder::Ascending => (taken + 1 < arity).then_some(taken + 1),
                BranchOrder::Descending => taken.checked_sub(1),
            };
            if let Some(t) = sibling {
                next = Some((i, t));
                break;
            }
        }
        let Some((depth, taken)) = next else {
            break;
        };
        if let Some(bound) = opts.max_executions {
            if report.executions >= bound {
                report.bound_exhausted = true;
                break;
            }
        }
        prefix = log[..depth].iter().map(|&(_, t)| t).collect();
        prefix.push(taken);
    }
    Ok(report)
}

/// Re-execute one recorded branch; the event log is byte-identical to the
/// exploration branch that produced the trace.
pub fn replay(
    module: &ModuleIR,
    trace: &ChoiceTrace,
    fault_injection: bool,
) -> Result<RunResult, MachineError> {
    let mopts = MachineOptions {
        fault_injection,
        report_leaks: false,
        branch_order: BranchOrder::Ascending,
    };
    let script: Vec<u32> = trace.decisions.iter().map(|d| d.taken).collect();
    let arities: Vec<u32> = trace.decisions.iter().map(|d| d.arity).collect();
    let mut m = Machine::with_script(module, &mopts, script, Some(arities))?;
    let r = m.run_to_end()?;
    if r.decisions.len() != trace.decisions.len() {
        return Err(MachineError::Replay(format!(
            "program made {} decision(s), trace has {}",
            r.decisions.len(),
            trace.decisions.len()
        )));
    }
    Ok(r)
}

/// Parse the text form written by `ChoiceTrace`'s `Display`.
pub fn parse_trace(text: &str) -> Result<ChoiceTrace, String> {
    let mut decisions = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(format!("line {}: expected `id arity taken`", lineno + 1));
        }
        let arity: u32 = fields[1]
            .parse()
            .map_err(|_| format!("line {}: bad arity", lineno + 1))?;
        let taken: u32 = fields[2]
            .parse()
            .map_err(|_| format!("line {}: bad branch", lineno + 1))?;
        decisions.push(Decision { arity, taken });
    }
    Ok(ChoiceTrace { decisions })
}
