//! Minimal language runtime: exception allocation, throw/catch/rethrow entry
//! points, terminate semantics, and the personality routine with
//! class-hierarchy type matching.
//!
//! Matching flattens ambiguous/virtual-base distinctions: every inheritance
//! edge is public and a catch clause matches iff its type is reachable from
//! the thrown type in the base DAG (reflexively). Exception specifications
//! (filter clauses) deliver their negative selector to the landing pad on
//! violation.

use crate::ir::TypeInfoRegistry;
use crate::lsda::{CallSiteRecord, LsdaTable};
use crate::machine::{
    Addr, BuiltinOutcome, ExcHeader, FaultKind, Machine, Origin, Stop, Value,
};
use crate::unwind::{self, ReasonCode, UnwindContext};

/// Exception-class tag of this runtime.
pub const CXX_CLASS: [u8; 8] = *b"EHVMCXX\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PersonalityPhase {
    Search,
    Cleanup { handler_frame: bool },
}

/// What a frame's action chain says about the in-flight exception.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandlerDecision {
    /// A catch clause matched; positive selector.
    Handler { selector: i32 },
    /// Only a cleanup applies; selector 0.
    Cleanup,
    /// An exception specification is violated; negative selector.
    SpecViolation { selector: i32 },
    Continue,
}

/// True iff a clause of type `clause` catches a thrown object of type
/// `thrown`: catch-all, or `clause` reachable from `thrown` along base edges.
pub fn match_type(reg: &TypeInfoRegistry, thrown: u32, clause: u32) -> bool {
    clause == 0 || reg.reaches(thrown, clause)
}

/// Walk one call-site record's action chain. The first catch or spec match
/// decides; a cleanup entry applies only when nothing else matched. Pure in
/// its inputs, so both phases see the same decision.
pub fn decide(
    table: &LsdaTable,
    record: &CallSiteRecord,
    thrown: u32,
    foreign: bool,
    reg: &TypeInfoRegistry,
) -> HandlerDecision {
    if record.landing_pad == 0 {
        return HandlerDecision::Continue;
    }
    if record.action == 0 {
        return HandlerDecision::Cleanup;
    }
    let mut cleanup_seen = false;
    for entry in table.chain(record.action) {
        let f = entry.type_filter;
        if f > 0 {
            let tt = table.types[f as usize - 1];
            // Foreign exceptions match catch-all only.
            if tt == 0 || (!foreign && match_type(reg, thrown, tt)) {
                return HandlerDecision::Handler { selector: f };
            }
        } else if f < 0 {
            if !foreign {
                let spec = &table.specs[(-f) as usize - 1];
                let permitted = spec.iter().any(|t| match_type(reg, thrown, *t));
                if !permitted {
                    return HandlerDecision::SpecViolation { selector: f };
                }
            }
        } else {
            cleanup_seen = true;
        }
    }
    if cleanup_seen {
        HandlerDecision::Cleanup
    } else {
        HandlerDecision::Continue
    }
}

/// The personality routine. Consults the frame's LSDA at the suspended pc and
/// answers per phase: found/continue during the search, or stage registers
/// 0/1 and the landing-pad ip and ask for installation during cleanup.
pub(crate) fn personality(
    m: &mut Machine,
    phase: PersonalityPhase,
    hdr: Addr,
    ctx: &mut UnwindContext,
) -> Result<ReasonCode, Stop> {
    m.stats.unwinder_entries += 1;
    let fatal = match phase {
        PersonalityPhase::Search => ReasonCode::FatalPhase1Error,
        PersonalityPhase::Cleanup { .. } => ReasonCode::FatalPhase2Error,
    };
    let Some(lsda_addr) = unwind::get_lsda(m, ctx) else {
        return Ok(ReasonCode::ContinueUnwind);
    };
    let table = {
        let Ok(bytes) = m.heap.bytes_of(lsda_addr.obj) else {
            return Ok(fatal);
        };
        LsdaTable::decode(bytes)
    };
    let Ok(table) = table else {
        return Ok(fatal);
    };
    let ip = unwind::get_ip(ctx);
    // A throwing pc outside every record means the exception crossed a point
    // that cannot unwind: an unwinder error at this frame.
    let Some(record) = table.find_callsite(ip).copied() else {
        return Ok(fatal);
    };
    let (thrown, foreign) = {
        let h = m.heap.exception(hdr).map_err(|e| m.heap_fault(e))?;
        (h.typeinfo, h.class != CXX_CLASS)
    };
    let decision = decide(&table, &record, thrown, foreign, &m.module.typeinfos);

    match phase {
        PersonalityPhase::Search => Ok(match decision {
            HandlerDecision::Handler { .. } | HandlerDecision::SpecViolation { .. } => {
                ReasonCode::HandlerFound
            }
            _ => ReasonCode::ContinueUnwind,
        }),
        PersonalityPhase::Cleanup { .. } => {
            let selector = match decision {
                HandlerDecision::Handler { selector }
                | HandlerDecision::SpecViolation { selector } => selector as i64,
                HandlerDecision::Cleanup => 0,
                HandlerDecision::Continue => return Ok(ReasonCode::ContinueUnwind),
            };
            unwind::set_gr(m, ctx, 0, Value::Addr(hdr))?;
            unwind::set_gr(m, ctx, 1, Value::Int(selector))?;
            unwind::set_ip(ctx, unwind::get_region_start(ctx) + record.landing_pad);
            Ok(ReasonCode::InstallContext)
        }
    }
}

// ----- runtime entry points ----------------------------------------------

pub(crate) fn allocate_exception(
    m: &mut Machine,
    args: &[Value],
) -> Result<BuiltinOutcome, Stop> {
    let n = match args.first() {
        Some(Value::Int(v)) if *v >= 0 => *v as usize,
        _ => {
            return Err(m
                .fault_here(FaultKind::Trap, "exception size must be a non-negative integer")
                .into())
        }
    };
    if m.fault_injection && m.choose(2).map_err(Stop::Harness)? == 1 {
        // The runtime cannot recover from failing to allocate the exception
        // object itself.
        return Err(m
            .fault_here(FaultKind::Terminate, "exception allocation failed")
            .into());
    }
    let a = m.heap.alloc_cells(n, Origin::Exception);
    Ok(BuiltinOutcome::Return(Some(Value::Addr(a))))
}

pub(crate) fn throw(m: &mut Machine, _fid: u32, args: &[Value]) -> Result<BuiltinOutcome, Stop> {
    let payload = match args.first() {
        Some(Value::Addr(a)) => *a,
        _ => {
            return Err(m
                .fault_here(FaultKind::Trap, "thrown payload must be an address")
                .into())
        }
    };
    if m.heap.origin(payload.obj) != Some(Origin::Exception) {
        return Err(m
            .fault_here(
                FaultKind::Trap,
                "thrown payload must come from __cxa_allocate_exception",
            )
            .into());
    }
    let type_id = match args.get(1) {
        Some(Value::Int(v)) if *v >= 1 && *v <= m.module.typeinfos.len() as i64 => *v as u32,
        _ => {
            return Err(m
                .fault_here(FaultKind::Trap, "thrown typeinfo does not resolve")
                .into())
        }
    };
    let dtor = match args.get(2) {
        Some(Value::Int(v)) => *v,
        _ => {
            return Err(m
                .fault_here(FaultKind::Trap, "exception destructor must be a function or 0")
                .into())
        }
    };

    if m.current_thread().active_cleanup.is_some() {
        return Err(m
            .fault_here(
                FaultKind::Terminate,
                "exception thrown while unwinding another exception",
            )
            .into());
    }

    let (here_fn, here_pc) = m.here();
    let hdr = m.heap.alloc_exception(ExcHeader {
        class: CXX_CLASS,
        typeinfo: type_id,
        payload: Some(payload),
        dtor,
        handler_count: 0,
        in_flight: true,
        cursor: None,
        throw_fn: here_fn,
        throw_pc: here_pc,
    });

    raise_or_terminate(m, hdr)
}

fn raise_or_terminate(m: &mut Machine, hdr: Addr) -> Result<BuiltinOutcome, Stop> {
    match unwind::raise_exception(m, hdr)? {
        unwind::RaiseOutcome::Transferred => Ok(BuiltinOutcome::Transferred),
        unwind::RaiseOutcome::Returned(code) => {
            let (throw_fn, throw_pc) = {
                let h = m.heap.exception(hdr).map_err(|e| m.heap_fault(e))?;
                (h.throw_fn.clone(), h.throw_pc)
            };
            let message = match code {
                ReasonCode::EndOfStack => "uncaught exception".to_string(),
                other => format!("unwinder failed with {other:?}"),
            };
            Err(Stop::Fault(crate::machine::FaultReport {
                kind: FaultKind::Terminate,
                function: throw_fn,
                pc: throw_pc,
                message,
            }))
        }
    }
}

pub(crate) fn begin_catch(m: &mut Machine, args: &[Value]) -> Result<BuiltinOutcome, Stop> {
    let hdr = m.arg_exception(args, 0, "caught exception")?;
    let payload = {
        let h = m.exception_mut(hdr)?;
        h.handler_count += 1;
        h.in_flight = false;
        h.cursor = None;
        h.payload
    };
    let th = m.current_thread_mut();
    th.caught.push(hdr);
    th.active_cleanup = None;
    // Foreign exceptions have no payload; hand back the header itself.
    Ok(BuiltinOutcome::Return(Some(Value::Addr(
        payload.unwrap_or(hdr),
    ))))
}

pub(crate) fn end_catch(m: &mut Machine) -> Result<BuiltinOutcome, Stop> {
    let Some(hdr) = m.current_thread().caught.last().copied() else {
        return Err(m
            .fault_here(
                FaultKind::Terminate,
                "__cxa_end_catch with no exception being handled",
            )
            .into());
    };
    m.current_thread_mut().caught.pop();
    let (count, in_flight) = {
        let h = m.exception_mut(hdr)?;
        h.handler_count -= 1;
        (h.handler_count, h.in_flight)
    };
    if count == 0 && !in_flight {
        match unwind::delete_exception(m, hdr)? {
            Some(tail) => Ok(tail),
            None => Ok(BuiltinOutcome::Return(None)),
        }
    } else {
        Ok(BuiltinOutcome::Return(None))
    }
}

pub(crate) fn rethrow(m: &mut Machine, _fid: u32) -> Result<BuiltinOutcome, Stop> {
    let Some(hdr) = m.current_thread().caught.last().copied() else {
        return Err(m
            .fault_here(
                FaultKind::Terminate,
                "__cxa_rethrow with no exception being handled",
            )
            .into());
    };
    raise_or_terminate(m, hdr)
}
