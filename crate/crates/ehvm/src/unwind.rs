//! The unwinder: a two-phase `RaiseException`, `Resume`, register and LSDA
//! accessors and `DeleteException`, over the machine's linked frames.
//!
//! The implementation follows the Itanium unwinding protocol with two
//! deviations: an exception propagating out of a `nounwind` function is a
//! verification fault, and an exception with no handler anywhere takes a
//! nondeterministic branch between "report without unwinding" and "run every
//! cleanup, then report".
//!
//! Atomic-section discipline: the unwinder runs masked. The mask is restored
//! to its pre-raise value around every personality call and at handler
//! installation, and re-acquired in between; `Resume` re-enters the masked
//! section and saves the state observed at the resume point for the next
//! hand-off.

use crate::cxxrt;
use crate::machine::{
    Addr, BuiltinOutcome, FaultKind, FaultReport, HandlerVisit, Machine, RetAction, Stop, Value,
};
use crate::machine::heap::Cursor;
use crate::ir::Op;

/// Reason codes exchanged between the unwinder and the personality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i64)]
pub enum ReasonCode {
    NoReason = 0,
    ForeignCaught = 1,
    FatalPhase2Error = 2,
    FatalPhase1Error = 3,
    EndOfStack = 5,
    HandlerFound = 6,
    InstallContext = 7,
    ContinueUnwind = 8,
}

/// Per-frame view handed to the personality. Only registers 0 and 1 exist;
/// values staged here land in the frame's landing-pad result at installation.
#[derive(Debug, Clone)]
pub struct UnwindContext {
    pub frame: u32,
    pub func: usize,
    ip: u32,
    staged: [Option<Value>; 2],
    staged_ip: Option<u32>,
}

impl UnwindContext {
    pub(crate) fn new(frame: u32, func: usize, ip: u32) -> UnwindContext {
        UnwindContext {
            frame,
            func,
            ip,
            staged: [None, None],
            staged_ip: None,
        }
    }
}

pub fn set_gr(
    m: &Machine,
    ctx: &mut UnwindContext,
    index: i64,
    value: Value,
) -> Result<(), FaultReport> {
    match index {
        0 | 1 => {
            ctx.staged[index as usize] = Some(value);
            Ok(())
        }
        _ => Err(m.fault_here(
            FaultKind::Trap,
            format!("unsupported register {index}: only 0 and 1 exist"),
        )),
    }
}

pub fn get_gr(m: &Machine, ctx: &UnwindContext, index: i64) -> Result<Value, FaultReport> {
    match index {
        0 | 1 => Ok(ctx.staged[index as usize].unwrap_or(Value::Int(0))),
        _ => Err(m.fault_here(
            FaultKind::Trap,
            format!("unsupported register {index}: only 0 and 1 exist"),
        )),
    }
}

pub fn set_ip(ctx: &mut UnwindContext, pc: u32) {
    ctx.staged_ip = Some(pc);
}

/// The call-site pc the frame is suspended at, used for the LSDA lookup.
pub fn get_ip(ctx: &UnwindContext) -> u32 {
    ctx.ip
}

/// Address of the frame's encoded LSDA, if its function carries one.
pub fn get_lsda(m: &Machine, ctx: &UnwindContext) -> Option<Addr> {
    let lsda_ref = m.module.functions[ctx.func].lsda_ref.as_deref()?;
    m.global_addr(lsda_ref)
}

/// Base for code pointers in the LSDA. Call-site pcs are function-linear
/// already, so the base is zero; landing pads resolve as
/// `GetRegionStart + record.landing_pad`.
pub fn get_region_start(_ctx: &UnwindContext) -> u32 {
    0
}

pub(crate) enum RaiseOutcome {
    /// Control was transferred to a landing pad.
    Transferred,
    /// The unwinder returns to its caller with this code.
    Returned(ReasonCode),
}

/// Two-phase unwinding. Phase 1 walks the thrower's stack outward consulting
/// each personality without mutating anything; phase 2 walks again, running
/// cleanups and finally installing the handler context found in phase 1.
///
/// Returns only on failure; on success control is inside a landing pad.
pub(crate) fn raise_exception(m: &mut Machine, hdr: Addr) -> Result<RaiseOutcome, Stop> {
    m.stats.unwinder_entries += 1;
    let (here_fn, here_pc) = m.here();
    {
        let h = m.exception_mut(hdr)?;
        h.in_flight = true;
        h.throw_fn = here_fn;
        h.throw_pc = here_pc;
    }
    let Some(thrower) = m.active_frame_id() else {
        return Err(m
            .fault_here(FaultKind::Trap, "raise outside any activation frame")
            .into());
    };

    let pre_raise_mask = m.set_mask(true);

    // Phase 1: search, without modifying the stack.
    let mut handler: Option<u32> = None;
    let mut cur = Some(thrower);
    while let Some(fid) = cur {
        let (func_idx, pc, parent) = {
            let f = m.frame(fid).unwrap();
            (f.func, f.pc, f.parent)
        };
        let module = m.module;
        let func = &module.functions[func_idx];
        if func.personality.is_some() {
            let mut ctx = UnwindContext::new(fid, func_idx, pc);
            m.set_mask(pre_raise_mask);
            let rc = cxxrt::personality(m, cxxrt::PersonalityPhase::Search, hdr, &mut ctx)?;
            m.set_mask(true);
            match rc {
                ReasonCode::HandlerFound => {
                    handler = Some(fid);
                    break;
                }
                ReasonCode::ContinueUnwind => {}
                _ => {
                    m.set_mask(pre_raise_mask);
                    return Ok(RaiseOutcome::Returned(ReasonCode::FatalPhase1Error));
                }
            }
        }
        // The exception is about to propagate out of this frame.
        if func.nounwind {
            return Err(Stop::Fault(FaultReport {
                kind: FaultKind::NounwindViolation,
                function: func.name.clone(),
                pc,
                message: "exception propagates out of a nounwind function".into(),
            }));
        }
        cur = parent;
    }

    if handler.is_none() {
        // No handler anywhere: the language leaves it open whether the stack
        // is unwound before termination, so both behaviors are explored.
        let branch = m.choose(2).map_err(Stop::Harness)?;
        if branch == 0 {
            m.set_mask(pre_raise_mask);
            return Ok(RaiseOutcome::Returned(ReasonCode::EndOfStack));
        }
    }

    phase2(m, hdr, Some(thrower), handler, pre_raise_mask)?;
    Ok(RaiseOutcome::Transferred)
}

/// Continue unwinding after a cleanup handler finished.
pub(crate) fn resume(m: &mut Machine, hdr: Addr) -> Result<(), Stop> {
    m.stats.unwinder_entries += 1;
    let cursor = m
        .heap
        .exception(hdr)
        .map_err(|e| m.heap_fault(e))?
        .cursor;
    let Some(cursor) = cursor else {
        return Err(m
            .fault_here(FaultKind::Terminate, "Resume with no unwind in progress")
            .into());
    };
    // Re-enter the atomic section; its state before the resume is what the
    // next personality call must observe.
    let pre_resume_mask = m.set_mask(true);
    let walk_from = m.frame(cursor.installed).and_then(|f| f.parent);
    phase2(m, hdr, walk_from, cursor.handler_frame, pre_resume_mask)
}

/// Phase 2: walk from `walk_from` outward; install at the first frame whose
/// personality asks for it. Frames between the current stack top and the
/// installation target are destroyed by `dios_unwind`.
fn phase2(
    m: &mut Machine,
    hdr: Addr,
    walk_from: Option<u32>,
    handler: Option<u32>,
    saved_mask: bool,
) -> Result<(), Stop> {
    let mut cur = walk_from;
    while let Some(fid) = cur {
        let (func_idx, pc, parent) = {
            let f = m.frame(fid).unwrap();
            (f.func, f.pc, f.parent)
        };
        let module = m.module;
        let func = &module.functions[func_idx];
        if func.personality.is_some() {
            let mut ctx = UnwindContext::new(fid, func_idx, pc);
            let phase = cxxrt::PersonalityPhase::Cleanup {
                handler_frame: handler == Some(fid),
            };
            m.set_mask(saved_mask);
            let rc = cxxrt::personality(m, phase, hdr, &mut ctx)?;
            m.set_mask(true);
            match rc {
                ReasonCode::InstallContext => {
                    return install(m, hdr, fid, &ctx, handler, saved_mask);
                }
                ReasonCode::ContinueUnwind => {
                    if handler == Some(fid) {
                        return Err(m
                            .fault_here(
                                FaultKind::Terminate,
                                "phase 2 found nothing at the frame phase 1 flagged",
                            )
                            .into());
                    }
                }
                _ => {
                    return Err(m
                        .fault_here(FaultKind::Terminate, "personality protocol violation")
                        .into());
                }
            }
        } else if handler == Some(fid) {
            return Err(m
                .fault_here(
                    FaultKind::Terminate,
                    "phase 2 found nothing at the frame phase 1 flagged",
                )
                .into());
        }
        // Phase 1 vets every frame it walks, but a pad that resumes past the
        // flagged frame sends phase 2 across frames phase 1 never saw.
        if func.nounwind {
            return Err(Stop::Fault(FaultReport {
                kind: FaultKind::NounwindViolation,
                function: func.name.clone(),
                pc,
                message: "exception propagates out of a nounwind function".into(),
            }));
        }
        cur = parent;
    }

    // Uncaught, in the branch that unwinds: every remaining frame goes, then
    // the error is reported at the throw site.
    if let Some(top) = m.active_frame_id() {
        m.dios_unwind(top, None)?;
    }
    let (throw_fn, throw_pc) = {
        let h = m.heap.exception(hdr).map_err(|e| m.heap_fault(e))?;
        (h.throw_fn.clone(), h.throw_pc)
    };
    Err(Stop::Fault(FaultReport {
        kind: FaultKind::Terminate,
        function: throw_fn,
        pc: throw_pc,
        message: "uncaught exception after unwinding".into(),
    }))
}

fn install(
    m: &mut Machine,
    hdr: Addr,
    target: u32,
    ctx: &UnwindContext,
    handler: Option<u32>,
    saved_mask: bool,
) -> Result<(), Stop> {
    let protocol = |m: &Machine, msg: &str| -> Stop {
        m.fault_here(FaultKind::Terminate, format!("personality protocol violation: {msg}"))
            .into()
    };
    let Some(ip) = ctx.staged_ip else {
        return Err(protocol(m, "no landing pad ip was staged"));
    };
    let Some(Value::Addr(reg0)) = ctx.staged[0] else {
        return Err(protocol(m, "register 0 must hold the exception object"));
    };
    let Some(Value::Int(reg1)) = ctx.staged[1] else {
        return Err(protocol(m, "register 1 must hold the selector"));
    };

    let func_idx = m.frame(target).unwrap().func;
    let pad_result = match m.instr_at(func_idx, ip) {
        Some(instr) if matches!(instr.op, Op::Landingpad { .. }) => match &instr.result {
            Some(r) => r.clone(),
            None => return Err(protocol(m, "landing pad has no result register")),
        },
        _ => return Err(protocol(m, "installation target is not a landingpad")),
    };

    let top = m.active_frame_id().unwrap();
    m.dios_unwind(top, Some(target))?;

    // The register values land in the landing-pad result pair.
    m.frame_mut(target)
        .unwrap()
        .locals
        .insert(pad_result, Value::Pair(reg0, reg1));

    let thread = m.frame(target).unwrap().thread as usize;
    {
        let h = m.exception_mut(hdr)?;
        h.cursor = Some(Cursor {
            installed: target,
            handler_frame: handler,
            saved_mask,
        });
    }
    if reg1 == 0 {
        // A cleanup owns the thread until the exception reaches a catch or
        // terminates; a fresh throw in between is the classic double fault.
        m.threads[thread].active_cleanup = Some(hdr);
    }
    let function = m.module.functions[func_idx].name.clone();
    m.stats.handler_log.push(HandlerVisit {
        function,
        pad_pc: ip,
        selector: reg1,
    });

    m.dios_jump(target, ip, Some(saved_mask))?;
    Ok(())
}

/// Destroy an exception object: run the payload destructor (as a guest call)
/// if one was registered, then free the payload and the header.
pub(crate) fn delete_exception(
    m: &mut Machine,
    hdr: Addr,
) -> Result<Option<BuiltinOutcome>, Stop> {
    m.stats.unwinder_entries += 1;
    let (cursor, dtor, payload) = {
        let h = m.heap.exception(hdr).map_err(|e| m.heap_fault(e))?;
        (h.cursor, h.dtor, h.payload)
    };
    if cursor.is_some() {
        return Err(m
            .fault_here(
                FaultKind::Terminate,
                "delete of an exception whose unwind is still in progress",
            )
            .into());
    }
    if dtor != 0 {
        if let Some(p) = payload {
            let Some(func) = m.module.function_by_id(dtor) else {
                return Err(m
                    .fault_here(FaultKind::Trap, "exception destructor is not a function")
                    .into());
            };
            if func.params.len() != 1 {
                return Err(m
                    .fault_here(FaultKind::Trap, "exception destructor takes one argument")
                    .into());
            }
            let func_idx = m.module.function_index(&func.name).unwrap();
            return Ok(Some(BuiltinOutcome::TailCall {
                func: func_idx,
                args: vec![Value::Addr(p)],
                on_return: RetAction::DestroyException { header: hdr },
            }));
        }
    }
    if let Some(p) = payload {
        if m.heap.is_live(p.obj) {
            m.heap.free(p.obj).map_err(|e| m.heap_fault(e))?;
        }
    }
    m.heap.free(hdr.obj).map_err(|e| m.heap_fault(e))?;
    Ok(None)
}
