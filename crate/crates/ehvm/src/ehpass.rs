//! The IR-to-IR lowering pass for exception support: per function it encodes
//! the landing-pad clause information into an LSDA byte constant, substitutes
//! statically computed selector integers for `typeid.for` pseudo-calls and
//! rewrites `resume` into calls of the runtime `Resume` entry point.
//!
//! Selector values are computed once and used for both the LSDA type table
//! and the `typeid.for` substitution, which is what keeps the personality and
//! the substituted handler dispatch code in agreement.

use crate::ir::{Clause, FunctionIR, GlobalIR, ModuleIR, Op, Operand};
use crate::lsda::{ActionEntry, CallSiteRecord, LsdaTable};
use indexmap::IndexMap;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PassError {
    #[error("module does not validate: {0}")]
    Invalid(String),
    #[error("{function}: typeid.for names {name}, which is not a typeinfo")]
    NotATypeinfo { function: String, name: String },
    #[error("{function}: typeid.for queries {name}, which no catch clause of the function lists")]
    NotCaughtHere { function: String, name: String },
    #[error("{function}: typeid.for must be a plain call with one @typeinfo argument")]
    MalformedTypeidFor { function: String },
}

/// Per-function selector assignment. Catch selectors are dense from 1 in
/// first-appearance order over the function's catch clauses (the catch-all
/// marker counts as one entry); filter selectors are dense from -1 over the
/// function's filter clauses in appearance order.
#[derive(Debug, Clone, Default)]
pub struct SelectorAssignment {
    /// `None` keys the catch-all entry.
    pub catch_selectors: IndexMap<Option<String>, i32>,
    /// filter_lists[k] holds the type names of the clause with selector -(k+1).
    pub filter_lists: Vec<Vec<String>>,
}

impl SelectorAssignment {
    pub fn selector_for(&self, ty: Option<&str>) -> Option<i32> {
        self.catch_selectors.get(&ty.map(str::to_string)).copied()
    }
}

/// Everything the pass computes for one function.
#[derive(Debug, Clone)]
pub struct FunctionEhInfo {
    pub selectors: SelectorAssignment,
    pub table: LsdaTable,
    /// landing-pad block label -> 1-based action chain start
    pub pad_chain: HashMap<String, u32>,
}

/// Compute selector assignment, action chains and the call-site table for one
/// function. Deterministic; works on both pre- and post-pass modules.
pub fn analyze(m: &ModuleIR, f: &FunctionIR) -> Result<FunctionEhInfo, PassError> {
    let mut selectors = SelectorAssignment::default();
    let mut table = LsdaTable::default();
    let mut pad_chain: HashMap<String, u32> = HashMap::new();

    // First sweep: assign selectors in clause appearance order.
    for b in &f.blocks {
        for i in &b.instrs {
            let Op::Landingpad { clauses } = &i.op else { continue };
            for c in clauses {
                match c {
                    Clause::Catch(ty) => {
                        if selectors.catch_selectors.contains_key(ty) {
                            continue;
                        }
                        let id = match ty {
                            Some(name) => m.typeinfos.id_of(name).ok_or_else(|| {
                                PassError::NotATypeinfo {
                                    function: f.name.clone(),
                                    name: name.clone(),
                                }
                            })?,
                            None => 0,
                        };
                        let sel = table.types.len() as i32 + 1;
                        table.types.push(id);
                        selectors.catch_selectors.insert(ty.clone(), sel);
                    }
                    Clause::Filter(tys) => {
                        let mut ids = Vec::with_capacity(tys.len());
                        for t in tys {
                            ids.push(m.typeinfos.id_of(t).ok_or_else(|| {
                                PassError::NotATypeinfo {
                                    function: f.name.clone(),
                                    name: t.clone(),
                                }
                            })?);
                        }
                        selectors.filter_lists.push(tys.clone());
                        table.specs.push(ids);
                    }
                    Clause::Cleanup => {}
                }
            }
        }
    }

    // Second sweep: one action chain per landing pad, entries in clause order.
    let mut filter_cursor = 0i32;
    for b in &f.blocks {
        for i in &b.instrs {
            let Op::Landingpad { clauses } = &i.op else { continue };
            let start = table.actions.len() as u32 + 1;
            pad_chain.insert(b.label.clone(), start);
            let n = clauses.len();
            for (ci, c) in clauses.iter().enumerate() {
                let filter = match c {
                    Clause::Catch(ty) => selectors.catch_selectors[ty],
                    Clause::Filter(_) => {
                        filter_cursor -= 1;
                        filter_cursor
                    }
                    Clause::Cleanup => 0,
                };
                let last = ci + 1 == n;
                table.actions.push(ActionEntry {
                    type_filter: filter,
                    next: if last { 0 } else { 1 },
                });
            }
        }
    }

    // Call-site records in pc order; length is one instruction because only
    // call and invoke can fault-unwind.
    let layout = f.layout();
    let mut pc = 0u32;
    for b in &f.blocks {
        for i in &b.instrs {
            match &i.op {
                Op::Invoke { unwind, .. } => {
                    let pad_pc = f
                        .block_index(unwind)
                        .map(|bi| layout.block_head(bi as u32))
                        .unwrap_or(0);
                    table.callsites.push(CallSiteRecord {
                        start: pc,
                        length: 1,
                        landing_pad: pad_pc,
                        action: pad_chain.get(unwind).copied().unwrap_or(0),
                    });
                }
                Op::Call { .. } => {
                    table.callsites.push(CallSiteRecord {
                        start: pc,
                        length: 1,
                        landing_pad: 0,
                        action: 0,
                    });
                }
                _ => {}
            }
            pc += 1;
        }
    }

    Ok(FunctionEhInfo {
        selectors,
        table,
        pad_chain,
    })
}

/// The call-site table of one function: one record per call/invoke in pc
/// order.
pub fn callsite_map(m: &ModuleIR, f: &FunctionIR) -> Result<Vec<CallSiteRecord>, PassError> {
    Ok(analyze(m, f)?.table.callsites)
}

/// Name of the emitted LSDA global for a function.
pub fn lsda_global_name(function: &str) -> String {
    format!("@__lsda.{}", function.trim_start_matches('@'))
}

/// Run the lowering pass over a whole module. Functions without landing pads
/// come out byte-identical; running the pass twice changes nothing.
pub fn run_pass(m: &ModuleIR) -> Result<ModuleIR, PassError> {
    let diags = crate::ir::validate(m);
    if let Some(d) = diags.first() {
        return Err(PassError::Invalid(d.to_string()));
    }

    let mut out = m.clone();
    for fi in 0..out.functions.len() {
        let has_pad = out.functions[fi]
            .blocks
            .iter()
            .any(|b| b.instrs.iter().any(|i| matches!(i.op, Op::Landingpad { .. })));
        if !has_pad {
            continue;
        }
        // Selector assignment depends only on the clauses, which the rewrite
        // leaves alone; the encoded table is computed from the rewritten body
        // so that a second application reproduces it exactly.
        let info = analyze(m, &out.functions[fi])?;
        let fname = out.functions[fi].name.clone();
        rewrite_function(m, &mut out.functions[fi], &info)?;
        let final_info = analyze(m, &out.functions[fi])?;

        let gname = lsda_global_name(&fname);
        let bytes = final_info.table.encode();
        match out.globals.iter_mut().find(|g| g.name == gname) {
            Some(g) => g.bytes = bytes,
            None => out.globals.push(GlobalIR {
                name: gname.clone(),
                bytes,
            }),
        }
        out.functions[fi].lsda_ref = Some(gname);
    }
    Ok(out)
}

fn rewrite_function(
    m: &ModuleIR,
    f: &mut FunctionIR,
    info: &FunctionEhInfo,
) -> Result<(), PassError> {
    for b in &mut f.blocks {
        for i in &mut b.instrs {
            match &i.op {
                Op::Call { callee, args } if callee == "@typeid.for" => {
                    let ty = match args.as_slice() {
                        [Operand::Symbol(s)] => s.clone(),
                        _ => {
                            return Err(PassError::MalformedTypeidFor {
                                function: f.name.clone(),
                            })
                        }
                    };
                    if m.typeinfos.id_of(&ty).is_none() {
                        return Err(PassError::NotATypeinfo {
                            function: f.name.clone(),
                            name: ty,
                        });
                    }
                    let Some(sel) = info.selectors.selector_for(Some(&ty)) else {
                        return Err(PassError::NotCaughtHere {
                            function: f.name.clone(),
                            name: ty,
                        });
                    };
                    i.op = Op::Const {
                        value: Operand::Imm(sel as i64),
                    };
                }
                Op::Invoke { callee, .. } if callee == "@typeid.for" => {
                    return Err(PassError::MalformedTypeidFor {
                        function: f.name.clone(),
                    })
                }
                Op::Resume { value } => {
                    // One-for-one rewrite: the call is the block terminator,
                    // so pc numbering is unchanged by the pass.
                    i.op = Op::Call {
                        callee: "@_Unwind_Resume".to_string(),
                        args: vec![value.clone()],
                    };
                    i.result = None;
                }
                _ => {}
            }
        }
    }
    Ok(())
}
