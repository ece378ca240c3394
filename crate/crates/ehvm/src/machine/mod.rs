//! The abstract machine: singly-linked activation frames, control registers,
//! a tracked heap, hypercalls and the interrupt mask.
//!
//! `invoke` executes as a call followed by an unconditional branch on return;
//! `landingpad` is a no-op whose result the unwinder pre-fills. Nondeterminism
//! (scheduling, allocation faults, the uncaught-exception duality) funnels
//! through one `choose` primitive driven by a scripted decision prefix, which
//! is what makes exploration and replay deterministic.

pub mod heap;

pub use heap::{Addr, Census, Cursor, ExcHeader, Heap, Origin, Value};

use crate::builtins::{self, Builtin};
use crate::ir::{BinKind, FnLayout, InstructionIR, ModuleIR, Op, Operand};
use crate::trace::Event;
use crate::{cxxrt, unwind};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

pub const MAIN: &str = "@main";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Bounds,
    UseAfterFree,
    Uninitialized,
    NounwindViolation,
    Terminate,
    Trap,
    Leak,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaultKind::Bounds => "bounds",
            FaultKind::UseAfterFree => "use-after-free",
            FaultKind::Uninitialized => "uninitialized",
            FaultKind::NounwindViolation => "nounwind-violation",
            FaultKind::Terminate => "terminate",
            FaultKind::Trap => "trap",
            FaultKind::Leak => "leak",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultReport {
    pub kind: FaultKind,
    pub function: String,
    pub pc: u32,
    pub message: String,
}

impl fmt::Display for FaultReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at {} pc {}: {}",
            self.kind, self.function, self.pc, self.message
        )
    }
}

/// Harness-level errors: not guest behavior, but a broken driver request.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum MachineError {
    #[error("module does not validate: {0}")]
    Invalid(String),
    #[error("no {MAIN} function")]
    NoMain,
    #[error("replay mismatch: {0}")]
    Replay(String),
}

/// Why a step (or run) stopped making progress.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Halted(i64),
    Fault(FaultReport),
}

/// Result of executing one instruction-or-scheduling step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    /// A nondeterministic branch point was resolved this step.
    Choice { arity: u32, taken: u32 },
    Halted(i64),
    Fault(FaultReport),
}

pub(crate) enum Stop {
    Fault(FaultReport),
    Harness(MachineError),
}

impl From<FaultReport> for Stop {
    fn from(f: FaultReport) -> Stop {
        Stop::Fault(f)
    }
}

/// How unresolved choices beyond the scripted prefix are decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchOrder {
    #[default]
    Ascending,
    Descending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ChoiceMode {
    /// Take the default branch beyond the script.
    Free,
    /// The script must cover every choice point exactly.
    Replay,
}

#[derive(Debug, Clone)]
struct ChoiceEngine {
    script: Vec<u32>,
    mode: ChoiceMode,
    order: BranchOrder,
    /// Expected arities when replaying a recorded trace.
    replay_arities: Vec<u32>,
    log: Vec<(u32, u32)>,
}

impl ChoiceEngine {
    fn next(&mut self, arity: u32) -> Result<u32, MachineError> {
        let idx = self.log.len();
        let taken = match self.script.get(idx) {
            Some(&t) => {
                if self.mode == ChoiceMode::Replay {
                    match self.replay_arities.get(idx) {
                        Some(&a) if a == arity => {}
                        Some(&a) => {
                            return Err(MachineError::Replay(format!(
                                "decision {idx} expects arity {a}, program offered {arity}"
                            )))
                        }
                        None => {}
                    }
                }
                if t >= arity {
                    return Err(MachineError::Replay(format!(
                        "decision {idx} takes branch {t} of {arity}"
                    )));
                }
                t
            }
            None => match self.mode {
                ChoiceMode::Free => match self.order {
                    BranchOrder::Ascending => 0,
                    BranchOrder::Descending => arity - 1,
                },
                ChoiceMode::Replay => {
                    return Err(MachineError::Replay(format!(
                        "program offered choice {idx}, trace has {}",
                        self.script.len()
                    )))
                }
            },
        };
        self.log.push((arity, taken));
        Ok(taken)
    }
}

/// An activation record. The stack is the singly-linked parent chain.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: u32,
    pub parent: Option<u32>,
    pub func: usize,
    pub pc: u32,
    pub prev_block: Option<u32>,
    pub locals: HashMap<String, Value>,
    /// Object ids owned by this frame; freed with it.
    pub allocas: Vec<u32>,
    pub thread: u32,
    pub on_return: Option<RetAction>,
}

/// Deferred work to run when a host-pushed frame returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetAction {
    /// Free the payload and header of an exception whose destructor just ran.
    DestroyException { header: Addr },
}

#[derive(Debug, Clone)]
pub struct Thread {
    pub id: u32,
    pub active: Option<u32>,
    pub exit_value: Option<i64>,
    /// Caught-exception stack, innermost last (header addresses).
    pub caught: Vec<Addr>,
    /// Exception whose cleanup phase currently owns this thread's unwinding.
    pub active_cleanup: Option<Addr>,
}

impl Thread {
    fn runnable(&self) -> bool {
        self.active.is_some()
    }
}

/// Landing-pad visits observed by the unwinder, for harness-level checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandlerVisit {
    pub function: String,
    pub pad_pc: u32,
    pub selector: i64,
}

#[derive(Debug, Clone, Default)]
pub struct Stats {
    /// Entries into any unwinder operation (zero on non-throwing runs).
    pub unwinder_entries: u64,
    pub handler_log: Vec<HandlerVisit>,
    pub steps: u64,
}

#[derive(Debug, Clone, Default)]
pub struct MachineOptions {
    pub fault_injection: bool,
    pub report_leaks: bool,
    pub branch_order: BranchOrder,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: Outcome,
    pub events: Vec<Event>,
    pub stats: Stats,
    /// Every nondeterministic decision made, in order: (arity, taken).
    pub decisions: Vec<(u32, u32)>,
    pub census: Census,
    pub frames_live: usize,
}

enum Callee {
    Guest(usize),
}

/// Result of one builtin call.
pub(crate) enum BuiltinOutcome {
    Return(Option<Value>),
    /// Control was transferred (context installed, jump performed); the call
    /// never completes.
    Transferred,
    /// Push a guest frame as if the caller had called it; run the action when
    /// it returns.
    TailCall {
        func: usize,
        args: Vec<Value>,
        on_return: RetAction,
    },
}

pub struct Machine<'m> {
    pub(crate) module: &'m ModuleIR,
    layouts: Vec<FnLayout>,
    callees: HashMap<&'m str, Callee>,
    pub(crate) heap: Heap,
    frames: Vec<Option<Frame>>,
    pub(crate) threads: Vec<Thread>,
    cur: usize,
    pub(crate) mask: bool,
    pub(crate) fault_injection: bool,
    fault: Option<FaultReport>,
    choices: ChoiceEngine,
    pub events: Vec<Event>,
    pub stats: Stats,
    globals: HashMap<&'m str, Addr>,
    report_leaks: bool,
    skip_boundary_once: bool,
}

impl<'m> Machine<'m> {
    pub fn new(module: &'m ModuleIR, opts: &MachineOptions) -> Result<Machine<'m>, MachineError> {
        Self::with_script(module, opts, Vec::new(), None)
    }

    pub(crate) fn with_script(
        module: &'m ModuleIR,
        opts: &MachineOptions,
        script: Vec<u32>,
        replay_arities: Option<Vec<u32>>,
    ) -> Result<Machine<'m>, MachineError> {
        let diags = crate::ir::validate(module);
        if let Some(d) = diags.first() {
            return Err(MachineError::Invalid(d.to_string()));
        }
        let main = module.function_index(MAIN).ok_or(MachineError::NoMain)?;

        let layouts = module.functions.iter().map(|f| f.layout()).collect();
        let mut callees = HashMap::new();
        for (i, f) in module.functions.iter().enumerate() {
            callees.insert(f.name.as_str(), Callee::Guest(i));
        }

        let mode = if replay_arities.is_some() {
            ChoiceMode::Replay
        } else {
            ChoiceMode::Free
        };
        let mut m = Machine {
            module,
            layouts,
            callees,
            heap: Heap::default(),
            frames: Vec::new(),
            threads: Vec::new(),
            cur: 0,
            mask: false,
            fault_injection: opts.fault_injection,
            fault: None,
            choices: ChoiceEngine {
                script,
                mode,
                order: opts.branch_order,
                replay_arities: replay_arities.unwrap_or_default(),
                log: Vec::new(),
            },
            events: Vec::new(),
            stats: Stats::default(),
            globals: HashMap::new(),
            report_leaks: opts.report_leaks,
            skip_boundary_once: false,
        };
        for g in &module.globals {
            let addr = m.heap.alloc_bytes(g.bytes.clone(), Origin::Global);
            m.globals.insert(g.name.as_str(), addr);
        }
        m.spawn(main, Vec::new());
        Ok(m)
    }

    pub fn run(module: &'m ModuleIR, opts: &MachineOptions) -> Result<RunResult, MachineError> {
        let mut m = Machine::new(module, opts)?;
        m.run_to_end()
    }

    pub(crate) fn run_to_end(&mut self) -> Result<RunResult, MachineError> {
        let outcome = loop {
            match self.step() {
                Ok(StepOutcome::Continue | StepOutcome::Choice { .. }) => {}
                Ok(StepOutcome::Halted(code)) => break Outcome::Halted(code),
                Ok(StepOutcome::Fault(f)) => break Outcome::Fault(f),
                Err(e) => return Err(e),
            }
        };
        Ok(RunResult {
            outcome,
            events: std::mem::take(&mut self.events),
            stats: std::mem::take(&mut self.stats),
            decisions: std::mem::take(&mut self.choices.log),
            census: self.heap.census(),
            frames_live: self.frames.iter().flatten().count(),
        })
    }

    // ----- frame and thread plumbing -------------------------------------

    pub(crate) fn frame(&self, id: u32) -> Option<&Frame> {
        if id == 0 {
            return None;
        }
        self.frames.get(id as usize - 1).and_then(|f| f.as_ref())
    }

    pub(crate) fn frame_mut(&mut self, id: u32) -> Option<&mut Frame> {
        if id == 0 {
            return None;
        }
        self.frames.get_mut(id as usize - 1).and_then(|f| f.as_mut())
    }

    fn push_frame(
        &mut self,
        thread: u32,
        parent: Option<u32>,
        func: usize,
        args: Vec<Value>,
        on_return: Option<RetAction>,
    ) -> u32 {
        let id = self.frames.len() as u32 + 1;
        let mut locals = HashMap::new();
        for (p, v) in self.module.functions[func].params.iter().zip(args) {
            locals.insert(p.clone(), v);
        }
        self.frames.push(Some(Frame {
            id,
            parent,
            func,
            pc: 0,
            prev_block: None,
            locals,
            allocas: Vec::new(),
            thread,
            on_return,
        }));
        id
    }

    pub(crate) fn spawn(&mut self, func: usize, args: Vec<Value>) -> u32 {
        let tid = self.threads.len() as u32;
        let fid = self.push_frame(tid, None, func, args, None);
        self.threads.push(Thread {
            id: tid,
            active: Some(fid),
            exit_value: None,
            caught: Vec::new(),
            active_cleanup: None,
        });
        tid
    }

    pub(crate) fn current_thread(&self) -> &Thread {
        &self.threads[self.cur]
    }

    pub(crate) fn current_thread_mut(&mut self) -> &mut Thread {
        &mut self.threads[self.cur]
    }

    pub(crate) fn active_frame_id(&self) -> Option<u32> {
        self.current_thread().active
    }

    pub fn census(&self) -> Census {
        self.heap.census()
    }

    pub fn frames_live(&self) -> usize {
        self.frames.iter().flatten().count()
    }

    fn function_name(&self, func: usize) -> &'m str {
        &self.module.functions[func].name
    }

    pub(crate) fn instr_at(&self, func: usize, pc: u32) -> Option<&'m InstructionIR> {
        let module = self.module;
        let (b, i) = self.layouts[func].locate(pc)?;
        Some(&module.functions[func].blocks[b as usize].instrs[i as usize])
    }

    pub(crate) fn global_addr(&self, name: &str) -> Option<Addr> {
        self.globals.get(name).copied()
    }

    /// Location of the current thread's active instruction, for fault reports.
    pub(crate) fn here(&self) -> (String, u32) {
        match self.active_frame_id().and_then(|id| self.frame(id)) {
            Some(f) => (self.function_name(f.func).to_string(), f.pc),
            None => (MAIN.to_string(), 0),
        }
    }

    pub(crate) fn fault_here(&self, kind: FaultKind, msg: impl Into<String>) -> FaultReport {
        let (function, pc) = self.here();
        FaultReport {
            kind,
            function,
            pc,
            message: msg.into(),
        }
    }

    pub(crate) fn heap_fault(&self, e: heap::HeapError) -> FaultReport {
        self.fault_here(e.kind, e.msg)
    }

    /// Mutable exception-header access with fault location attached.
    pub(crate) fn exception_mut(&mut self, hdr: Addr) -> Result<&mut ExcHeader, FaultReport> {
        let (function, pc) = self.here();
        self.heap.exception_mut(hdr).map_err(|e| FaultReport {
            kind: e.kind,
            function,
            pc,
            message: e.msg,
        })
    }

    // ----- control primitives ---------------------------------------------

    /// Resolve one nondeterministic branch point. Arity 1 never records a
    /// decision.
    pub(crate) fn choose(&mut self, arity: u32) -> Result<u32, MachineError> {
        if arity <= 1 {
            return Ok(0);
        }
        let taken = self.choices.next(arity)?;
        self.events.push(Event::Choice { arity, taken });
        Ok(taken)
    }

    /// Update the interrupt mask, returning the previous value. Every update
    /// is visible in the event log.
    pub(crate) fn set_mask(&mut self, value: bool) -> bool {
        let prev = self.mask;
        self.mask = value;
        self.events.push(Event::Mask { value });
        prev
    }

    /// Unlink and destroy frames from `from` (inclusive) up the parent chain
    /// to `to` (exclusive; the whole stack when `None`), freeing every alloca
    /// the removed frames own. Operates on whichever stack `from` lives on.
    pub(crate) fn dios_unwind(&mut self, from: u32, to: Option<u32>) -> Result<(), FaultReport> {
        if self.frame(from).is_none() {
            return Err(self.fault_here(FaultKind::UseAfterFree, "unwind from a dead frame"));
        }
        if let Some(t) = to {
            if self.frame(t).is_none() {
                return Err(self.fault_here(FaultKind::UseAfterFree, "unwind to a dead frame"));
            }
        }
        // Collect the doomed region first so a bad `to` faults before any
        // destruction.
        let mut doomed = Vec::new();
        let mut cursor = Some(from);
        loop {
            match (cursor, to) {
                (c, Some(t)) if c == Some(t) => break,
                (None, Some(_)) => {
                    return Err(self.fault_here(
                        FaultKind::Trap,
                        "unwind target is not an ancestor of the source frame",
                    ))
                }
                (None, None) => break,
                (Some(c), _) => {
                    doomed.push(c);
                    cursor = self.frame(c).unwrap().parent;
                }
            }
        }
        let thread = self.frame(from).unwrap().thread;
        let mut freed = 0u32;
        for id in &doomed {
            let frame = self.frames[*id as usize - 1].take().unwrap();
            for obj in frame.allocas {
                // Alloca addresses are exactly the local variables: gone with
                // their frame.
                if self.heap.is_live(obj) {
                    self.heap.free(obj).unwrap();
                    freed += 1;
                }
            }
        }
        let th = &mut self.threads[thread as usize];
        if let Some(active) = th.active {
            if doomed.contains(&active) {
                th.active = to;
                if to.is_none() {
                    th.exit_value.get_or_insert(0);
                }
            }
        }
        self.events.push(Event::Unwind {
            from,
            to: to.unwrap_or(0),
            freed,
        });
        Ok(())
    }

    /// Non-local jump: repoint the active frame and program counter, and
    /// optionally restore the interrupt mask.
    pub(crate) fn dios_jump(
        &mut self,
        frame_id: u32,
        pc: u32,
        mask_restore: Option<bool>,
    ) -> Result<(), FaultReport> {
        let Some(frame) = self.frame(frame_id) else {
            return Err(self.fault_here(FaultKind::UseAfterFree, "jump to a dead frame"));
        };
        let func = frame.func;
        if self.layouts[func].locate(pc).is_none() {
            return Err(self.fault_here(FaultKind::Trap, format!("jump to invalid pc {pc}")));
        }
        let old_block = self.layouts[func].block_of(frame.pc);
        let thread = frame.thread;
        {
            let f = self.frame_mut(frame_id).unwrap();
            f.prev_block = old_block;
            f.pc = pc;
        }
        self.threads[thread as usize].active = Some(frame_id);
        self.cur = thread as usize;
        if let Some(v) = mask_restore {
            self.set_mask(v);
        }
        Ok(())
    }

    // ----- the step loop ---------------------------------------------------

    fn runnable(&self) -> Vec<usize> {
        self.threads
            .iter()
            .enumerate()
            .filter(|(_, t)| t.runnable())
            .map(|(i, _)| i)
            .collect()
    }

    fn halt_code(&self) -> i64 {
        self.threads.first().and_then(|t| t.exit_value).unwrap_or(0)
    }

    /// Execute one scheduling decision or one instruction of the active frame.
    pub fn step(&mut self) -> Result<StepOutcome, MachineError> {
        if let Some(f) = &self.fault {
            return Ok(StepOutcome::Fault(f.clone()));
        }
        let runnable = self.runnable();
        if runnable.is_empty() {
            return Ok(self.halt());
        }
        if !runnable.contains(&self.cur) {
            // The previous thread left the runnable set; fall to the lowest
            // id without a choice point.
            self.cur = runnable[0];
        }

        let fid = self.threads[self.cur].active.unwrap();
        let frame = self.frame(fid).unwrap();
        let (func, pc) = (frame.func, frame.pc);
        let Some(instr) = self.instr_at(func, pc) else {
            let r = self.fault_here(FaultKind::Trap, "program counter out of range");
            return Ok(self.raise_fault(r));
        };

        // Scheduling boundary: before a globally visible instruction, with
        // preemption allowed and more than one runnable thread, the scheduler
        // picks who commits its next instruction.
        if !self.skip_boundary_once
            && !self.mask
            && runnable.len() > 1
            && self.is_global_effect(fid, instr)
        {
            let arity = runnable.len() as u32;
            let taken = self.choose(arity)?;
            self.cur = runnable[taken as usize];
            self.skip_boundary_once = true;
            return Ok(StepOutcome::Choice { arity, taken });
        }
        self.skip_boundary_once = false;

        let decisions_before = self.choices.log.len();
        self.events.push(Event::Step {
            function: self.function_name(func).to_string(),
            pc,
            opcode: instr.op.mnemonic(),
        });
        self.stats.steps += 1;

        match self.exec(fid, instr) {
            Ok(()) => {
                if self.runnable().is_empty() {
                    return Ok(self.halt());
                }
                if self.choices.log.len() > decisions_before {
                    let (arity, taken) = *self.choices.log.last().unwrap();
                    Ok(StepOutcome::Choice { arity, taken })
                } else {
                    Ok(StepOutcome::Continue)
                }
            }
            Err(Stop::Fault(f)) => Ok(self.raise_fault(f)),
            Err(Stop::Harness(e)) => Err(e),
        }
    }

    fn halt(&mut self) -> StepOutcome {
        let code = self.halt_code();
        if self.report_leaks && code == 0 {
            let c = self.heap.census();
            let leaked = c.user + c.alloca + c.exception;
            if leaked > 0 {
                let r = FaultReport {
                    kind: FaultKind::Leak,
                    function: MAIN.to_string(),
                    pc: 0,
                    message: format!("{leaked} object(s) still live at exit"),
                };
                return self.raise_fault(r);
            }
        }
        StepOutcome::Halted(code)
    }

    fn raise_fault(&mut self, f: FaultReport) -> StepOutcome {
        self.events.push(Event::Fault {
            kind: f.kind.to_string(),
            function: f.function.clone(),
            pc: f.pc,
        });
        self.fault = Some(f.clone());
        StepOutcome::Fault(f)
    }

    /// Would executing `instr` touch state visible to other threads?
    fn is_global_effect(&self, fid: u32, instr: &InstructionIR) -> bool {
        let frame = self.frame(fid).unwrap();
        let shared_addr = |o: &Operand| -> bool {
            let v = match o {
                Operand::Local(n) => frame.locals.get(n).copied(),
                Operand::Symbol(s) => self.global_addr(s).map(Value::Addr),
                Operand::Imm(_) => None,
            };
            match v {
                Some(Value::Addr(a)) => matches!(
                    self.heap.origin(a.obj),
                    Some(Origin::Global | Origin::User | Origin::Exception)
                ),
                _ => false,
            }
        };
        match &instr.op {
            Op::Load { addr } => shared_addr(addr),
            Op::Store { addr, .. } => shared_addr(addr),
            Op::Call { callee, .. } | Op::Invoke { callee, .. } => matches!(
                builtins::lookup(callee),
                Some(Builtin::Malloc | Builtin::Free)
            ),
            _ => false,
        }
    }

    // ----- operand evaluation ----------------------------------------------

    pub(crate) fn eval(&self, fid: u32, o: &Operand) -> Result<Value, FaultReport> {
        match o {
            Operand::Imm(v) => Ok(Value::Int(*v)),
            Operand::Local(n) => {
                let frame = self.frame(fid).unwrap();
                frame.locals.get(n).copied().ok_or_else(|| {
                    self.fault_here(
                        FaultKind::Uninitialized,
                        format!("read of unassigned register %{n}"),
                    )
                })
            }
            Operand::Symbol(s) => {
                if let Some(a) = self.global_addr(s) {
                    Ok(Value::Addr(a))
                } else if let Some(id) = self.module.function_id(s) {
                    Ok(Value::Int(id))
                } else if let Some(id) = self.module.typeinfos.id_of(s) {
                    Ok(Value::Int(id as i64))
                } else {
                    Err(self.fault_here(FaultKind::Trap, format!("unresolved symbol {s}")))
                }
            }
        }
    }

    fn set_result(&mut self, fid: u32, instr: &InstructionIR, v: Value) {
        if let Some(r) = &instr.result {
            self.frame_mut(fid).unwrap().locals.insert(r.clone(), v);
        }
    }

    fn advance(&mut self, fid: u32) {
        self.frame_mut(fid).unwrap().pc += 1;
    }

    fn branch(&mut self, fid: u32, label: &str) {
        let frame = self.frame(fid).unwrap();
        let func = frame.func;
        let old_block = self.layouts[func].block_of(frame.pc);
        let bi = self.module.functions[func].block_index(label).unwrap() as u32;
        let head = self.layouts[func].block_head(bi);
        let f = self.frame_mut(fid).unwrap();
        f.prev_block = old_block;
        f.pc = head;
    }

    // ----- instruction execution --------------------------------------------

    fn exec(&mut self, fid: u32, instr: &'m InstructionIR) -> Result<(), Stop> {
        match &instr.op {
            Op::Alloca { cells } => {
                let a = self.heap.alloc_cells(*cells as usize, Origin::Alloca);
                self.frame_mut(fid).unwrap().allocas.push(a.obj);
                self.set_result(fid, instr, Value::Addr(a));
                self.advance(fid);
            }
            Op::Load { addr } => {
                let a = self.addr_operand(fid, addr, "load")?;
                let v = self.heap.load(a).map_err(|e| self.heap_fault(e))?;
                self.set_result(fid, instr, v);
                self.advance(fid);
            }
            Op::Store { value, addr } => {
                let v = self.eval(fid, value)?;
                let a = self.addr_operand(fid, addr, "store")?;
                self.heap.store(a, v).map_err(|e| self.heap_fault(e))?;
                self.advance(fid);
            }
            Op::Bin { kind, lhs, rhs } => {
                let l = self.eval(fid, lhs)?;
                let r = self.eval(fid, rhs)?;
                let v = self.binop(*kind, l, r)?;
                self.set_result(fid, instr, v);
                self.advance(fid);
            }
            Op::Br { target } => self.branch(fid, target),
            Op::CondBr {
                cond,
                then_label,
                else_label,
            } => {
                let c = match self.eval(fid, cond)? {
                    Value::Int(v) => v,
                    _ => {
                        return Err(self
                            .fault_here(FaultKind::Trap, "condbr condition is not an integer")
                            .into())
                    }
                };
                let label = if c != 0 { then_label } else { else_label };
                self.branch(fid, label);
            }
            Op::Ret { value } => {
                let v = match value {
                    Some(o) => Some(self.eval(fid, o)?),
                    None => None,
                };
                self.ret(fid, v)?;
            }
            Op::Call { callee, args } | Op::Invoke { callee, args, .. } => {
                let argv = self.eval_args(fid, args)?;
                self.enter(fid, instr, callee, argv)?;
            }
            Op::Landingpad { .. } => {
                // Pre-filled by the unwinder; nothing to execute.
                self.advance(fid);
            }
            Op::Resume { .. } => {
                return Err(self
                    .fault_here(
                        FaultKind::Trap,
                        "resume requires the exception-lowering pass",
                    )
                    .into())
            }
            Op::Phi { incomings } => {
                let frame = self.frame(fid).unwrap();
                let func = frame.func;
                let prev = frame.prev_block;
                let mut chosen = None;
                for (v, label) in incomings {
                    let bi = self.module.functions[func].block_index(label).map(|b| b as u32);
                    if bi == prev {
                        chosen = Some(v.clone());
                        break;
                    }
                }
                match chosen {
                    Some(v) => {
                        let val = self.eval(fid, &v)?;
                        self.set_result(fid, instr, val);
                        self.advance(fid);
                    }
                    None => {
                        return Err(self
                            .fault_here(
                                FaultKind::Uninitialized,
                                "phi has no incoming for the predecessor block",
                            )
                            .into())
                    }
                }
            }
            Op::Const { value } => {
                let v = self.eval(fid, value)?;
                self.set_result(fid, instr, v);
                self.advance(fid);
            }
            Op::Gep { base, offset } => {
                let v = match self.eval(fid, base)? {
                    Value::Addr(a) => {
                        let off = a.off as i64 + offset;
                        if off < 0 {
                            return Err(self
                                .fault_here(FaultKind::Bounds, "address offset below zero")
                                .into());
                        }
                        Value::Addr(Addr {
                            obj: a.obj,
                            off: off as u32,
                        })
                    }
                    Value::Pair(a, sel) => match offset {
                        0 => Value::Addr(a),
                        1 => Value::Int(sel),
                        _ => {
                            return Err(self
                                .fault_here(FaultKind::Bounds, "pair has fields 0 and 1")
                                .into())
                        }
                    },
                    Value::Int(_) => {
                        return Err(self
                            .fault_here(FaultKind::Trap, "gep on an integer")
                            .into())
                    }
                };
                self.set_result(fid, instr, v);
                self.advance(fid);
            }
            Op::Trap => {
                return Err(self
                    .fault_here(FaultKind::Trap, "trap instruction executed")
                    .into())
            }
        }
        Ok(())
    }

    fn eval_args(&self, fid: u32, args: &[Operand]) -> Result<Vec<Value>, FaultReport> {
        args.iter().map(|a| self.eval(fid, a)).collect()
    }

    fn addr_operand(
        &self,
        fid: u32,
        o: &Operand,
        what: &str,
    ) -> Result<Addr, FaultReport> {
        match self.eval(fid, o)? {
            Value::Addr(a) => Ok(a),
            _ => Err(self.fault_here(FaultKind::Trap, format!("{what} needs an address"))),
        }
    }

    fn binop(&self, kind: BinKind, l: Value, r: Value) -> Result<Value, FaultReport> {
        use Value::*;
        Ok(match (kind, l, r) {
            (BinKind::Add, Int(a), Int(b)) => Int(a.wrapping_add(b)),
            (BinKind::Sub, Int(a), Int(b)) => Int(a.wrapping_sub(b)),
            (BinKind::Lt, Int(a), Int(b)) => Int((a < b) as i64),
            (BinKind::Eq, a, b) => Int((a == b) as i64),
            _ => {
                return Err(self.fault_here(
                    FaultKind::Trap,
                    format!("{} needs integer operands", kind.mnemonic()),
                ))
            }
        })
    }

    /// Return from frame `fid` with optional value: free the frame and its
    /// allocas, complete the suspended call/invoke in the parent, run any
    /// deferred action.
    fn ret(&mut self, fid: u32, value: Option<Value>) -> Result<(), Stop> {
        let frame = self.frames[fid as usize - 1].take().unwrap();
        for obj in &frame.allocas {
            if self.heap.is_live(*obj) {
                self.heap.free(*obj).unwrap();
            }
        }
        let thread = frame.thread;

        match frame.parent {
            None => {
                let th = &mut self.threads[thread as usize];
                th.active = None;
                th.exit_value = Some(match value {
                    Some(Value::Int(v)) => v,
                    _ => 0,
                });
            }
            Some(parent) => {
                if self.frame(parent).is_none() {
                    return Err(self
                        .fault_here(FaultKind::UseAfterFree, "return into a dead frame")
                        .into());
                }
                self.threads[thread as usize].active = Some(parent);
                let pinstr = {
                    let p = self.frame(parent).unwrap();
                    self.instr_at(p.func, p.pc)
                };
                match pinstr.map(|i| (&i.op, &i.result)) {
                    Some((Op::Call { .. }, result)) => {
                        if let (Some(r), Some(v)) = (result, value) {
                            self.frame_mut(parent).unwrap().locals.insert(r.clone(), v);
                        }
                        self.frame_mut(parent).unwrap().pc += 1;
                    }
                    Some((Op::Invoke { normal, .. }, result)) => {
                        if let (Some(r), Some(v)) = (result, value) {
                            self.frame_mut(parent).unwrap().locals.insert(r.clone(), v);
                        }
                        // call followed by an unconditional branch
                        self.branch(parent, normal);
                    }
                    _ => {
                        return Err(self
                            .fault_here(FaultKind::Trap, "return to a non-call site")
                            .into())
                    }
                }
            }
        }

        if let Some(action) = frame.on_return {
            self.run_ret_action(action)?;
        }
        Ok(())
    }

    fn run_ret_action(&mut self, action: RetAction) -> Result<(), Stop> {
        match action {
            RetAction::DestroyException { header } => {
                let payload = self
                    .heap
                    .exception(header)
                    .map_err(|e| self.heap_fault(e))?
                    .payload;
                if let Some(p) = payload {
                    if self.heap.is_live(p.obj) {
                        self.heap.free(p.obj).map_err(|e| self.heap_fault(e))?;
                    }
                }
                self.heap.free(header.obj).map_err(|e| self.heap_fault(e))?;
                Ok(())
            }
        }
    }

    /// Enter a call or invoke: push a guest frame or dispatch a builtin. The
    /// caller's pc stays at the call site while the callee runs; `ret`
    /// completes the call.
    fn enter(
        &mut self,
        fid: u32,
        instr: &'m InstructionIR,
        callee: &str,
        args: Vec<Value>,
    ) -> Result<(), Stop> {
        match self.callees.get(callee) {
            Some(Callee::Guest(func)) => {
                let func = *func;
                let thread = self.frame(fid).unwrap().thread;
                let child = self.push_frame(thread, Some(fid), func, args, None);
                self.threads[thread as usize].active = Some(child);
                Ok(())
            }
            None => match builtins::lookup(callee) {
                Some(b) => self.dispatch_builtin(fid, instr, b, args),
                None => Err(self
                    .fault_here(FaultKind::Trap, format!("unresolved call target {callee}"))
                    .into()),
            },
        }
    }

    fn dispatch_builtin(
        &mut self,
        fid: u32,
        instr: &'m InstructionIR,
        b: Builtin,
        args: Vec<Value>,
    ) -> Result<(), Stop> {
        let before = (fid, self.frame(fid).map(|f| f.pc));
        let out = self.exec_builtin(fid, b, args)?;
        match out {
            BuiltinOutcome::Transferred => Ok(()),
            BuiltinOutcome::TailCall {
                func,
                args,
                on_return,
            } => {
                let thread = self.frame(fid).unwrap().thread;
                let child = self.push_frame(thread, Some(fid), func, args, Some(on_return));
                self.threads[thread as usize].active = Some(child);
                Ok(())
            }
            BuiltinOutcome::Return(v) => {
                // If the builtin moved control (unwound the caller, jumped),
                // the call never completes normally.
                let after_pc = self.frame(before.0).map(|f| f.pc);
                let still_here = after_pc == before.1
                    && self.current_thread().active == Some(fid)
                    && after_pc.is_some();
                if !still_here {
                    return Ok(());
                }
                if let Some(v) = v {
                    self.set_result(fid, instr, v);
                }
                match &instr.op {
                    Op::Invoke { normal, .. } => self.branch(fid, normal),
                    _ => self.advance(fid),
                }
                Ok(())
            }
        }
    }

    // ----- builtins ---------------------------------------------------------

    fn arg_int(&self, args: &[Value], i: usize, what: &str) -> Result<i64, FaultReport> {
        match args.get(i) {
            Some(Value::Int(v)) => Ok(*v),
            _ => Err(self.fault_here(FaultKind::Trap, format!("{what} must be an integer"))),
        }
    }

    fn arg_addr(&self, args: &[Value], i: usize, what: &str) -> Result<Addr, FaultReport> {
        match args.get(i) {
            Some(Value::Addr(a)) => Ok(*a),
            _ => Err(self.fault_here(FaultKind::Trap, format!("{what} must be an address"))),
        }
    }

    /// Accept either an exception header address or the whole landing-pad
    /// pair; the runtime only needs the exception-object component.
    pub(crate) fn arg_exception(
        &self,
        args: &[Value],
        i: usize,
        what: &str,
    ) -> Result<Addr, FaultReport> {
        match args.get(i) {
            Some(Value::Addr(a)) => Ok(*a),
            Some(Value::Pair(a, _)) => Ok(*a),
            _ => Err(self.fault_here(
                FaultKind::Trap,
                format!("{what} must be an exception object"),
            )),
        }
    }

    fn exec_builtin(
        &mut self,
        fid: u32,
        b: Builtin,
        args: Vec<Value>,
    ) -> Result<BuiltinOutcome, Stop> {
        use Builtin::*;
        let ret = |v: Value| Ok(BuiltinOutcome::Return(Some(v)));
        let ret0 = || Ok(BuiltinOutcome::Return(None));
        match b {
            VmChoose => {
                let n = self.arg_int(&args, 0, "choose arity")?;
                if n < 1 {
                    return Err(self
                        .fault_here(FaultKind::Trap, "choose arity must be positive")
                        .into());
                }
                let taken = self.choose(n as u32).map_err(Stop::Harness)?;
                ret(Value::Int(taken as i64))
            }
            VmMask => {
                let v = self.arg_int(&args, 0, "mask value")?;
                let prev = self.set_mask(v != 0);
                ret(Value::Int(prev as i64))
            }
            VmSpawn => {
                let id = self.arg_int(&args, 0, "spawn entry")?;
                let Some(func) = self.module.function_by_id(id) else {
                    return Err(self
                        .fault_here(FaultKind::Trap, "spawn entry is not a function")
                        .into());
                };
                if func.params.len() != args.len() - 1 {
                    return Err(self
                        .fault_here(FaultKind::Trap, "spawn argument count mismatch")
                        .into());
                }
                let func = self.module.function_index(&func.name).unwrap();
                let tid = self.spawn(func, args[1..].to_vec());
                ret(Value::Int(tid as i64))
            }
            Malloc => {
                let n = self.arg_int(&args, 0, "allocation size")?;
                if n < 0 {
                    return Err(self
                        .fault_here(FaultKind::Trap, "allocation size must be non-negative")
                        .into());
                }
                if self.fault_injection && self.choose(2).map_err(Stop::Harness)? == 1 {
                    return ret(Value::Int(0));
                }
                let a = self.heap.alloc_cells(n as usize, Origin::User);
                ret(Value::Addr(a))
            }
            Free => {
                let a = self.arg_addr(&args, 0, "free target")?;
                let valid = a.off == 0 && self.heap.origin(a.obj) == Some(Origin::User);
                if !valid {
                    return Err(self
                        .fault_here(FaultKind::UseAfterFree, "free of a non-heap address")
                        .into());
                }
                self.heap.free(a.obj).map_err(|e| self.heap_fault(e))?;
                ret0()
            }
            DiosUnwind => {
                let from = self.arg_int(&args, 0, "unwind source frame")? as u32;
                let to = self.arg_int(&args, 1, "unwind target frame")? as u32;
                self.dios_unwind(from, (to != 0).then_some(to))?;
                ret0()
            }
            DiosJump => {
                let frame = self.arg_int(&args, 0, "jump frame")? as u32;
                let pc = self.arg_int(&args, 1, "jump pc")? as u32;
                let mask = match self.arg_int(&args, 2, "jump mask")? {
                    v if v < 0 => None,
                    v => Some(v != 0),
                };
                self.dios_jump(frame, pc, mask)?;
                Ok(BuiltinOutcome::Transferred)
            }
            Setjmp => {
                let env = self.arg_addr(&args, 0, "setjmp environment")?;
                let frame = self.frame(fid).unwrap();
                let (id, pc) = (frame.id, frame.pc);
                self.heap
                    .store(env, Value::Int(id as i64))
                    .map_err(|e| self.heap_fault(e))?;
                self.heap
                    .store(
                        Addr {
                            obj: env.obj,
                            off: env.off + 1,
                        },
                        Value::Int(pc as i64),
                    )
                    .map_err(|e| self.heap_fault(e))?;
                ret(Value::Int(0))
            }
            Longjmp => {
                let env = self.arg_addr(&args, 0, "longjmp environment")?;
                let v = self.arg_int(&args, 1, "longjmp value")?;
                self.longjmp(env, v)?;
                Ok(BuiltinOutcome::Transferred)
            }
            RaiseException => {
                let hdr = self.arg_exception(&args, 0, "exception")?;
                match unwind::raise_exception(self, hdr)? {
                    unwind::RaiseOutcome::Transferred => Ok(BuiltinOutcome::Transferred),
                    unwind::RaiseOutcome::Returned(code) => ret(Value::Int(code as i64)),
                }
            }
            Resume => {
                let hdr = self.arg_exception(&args, 0, "exception")?;
                unwind::resume(self, hdr)?;
                Ok(BuiltinOutcome::Transferred)
            }
            DeleteException => {
                let hdr = self.arg_exception(&args, 0, "exception")?;
                match unwind::delete_exception(self, hdr)? {
                    Some(tc) => Ok(tc),
                    None => ret0(),
                }
            }
            SetGr | GetGr | SetIp | GetIp | GetLsda | GetRegionStart => Err(self
                .fault_here(
                    FaultKind::Trap,
                    "no unwind context is active; these operate inside the unwinder",
                )
                .into()),
            CxaAllocateException => cxxrt::allocate_exception(self, &args),
            CxaThrow => cxxrt::throw(self, fid, &args),
            CxaBeginCatch => cxxrt::begin_catch(self, &args),
            CxaEndCatch => cxxrt::end_catch(self),
            CxaRethrow => cxxrt::rethrow(self, fid),
            Personality => Err(self
                .fault_here(FaultKind::Trap, "the personality is invoked by the unwinder")
                .into()),
            TypeidFor => Err(self
                .fault_here(FaultKind::Trap, "typeid.for requires the exception-lowering pass")
                .into()),
        }
    }

    #[cfg(test)]
    pub(crate) fn parent_of(&self, id: u32) -> Option<u32> {
        self.frame(id).and_then(|f| f.parent)
    }

    fn longjmp(&mut self, env: Addr, v: i64) -> Result<(), Stop> {
        let saved_frame = match self.heap.load(env).map_err(|e| self.heap_fault(e))? {
            Value::Int(id) => id as u32,
            _ => {
                return Err(self
                    .fault_here(FaultKind::Trap, "corrupt jump environment")
                    .into())
            }
        };
        let env_pc = Addr {
            obj: env.obj,
            off: env.off + 1,
        };
        let saved_pc = match self.heap.load(env_pc).map_err(|e| self.heap_fault(e))? {
            Value::Int(pc) => pc as u32,
            _ => {
                return Err(self
                    .fault_here(FaultKind::Trap, "corrupt jump environment")
                    .into())
            }
        };
        if self.frame(saved_frame).is_none() {
            return Err(self
                .fault_here(FaultKind::UseAfterFree, "longjmp to a dead frame")
                .into());
        }
        let from = self.active_frame_id().unwrap();
        self.dios_unwind(from, Some(saved_frame))?;
        // The saved pc addresses the setjmp call; give it the new return value
        // and continue right after it.
        let coerced = if v == 0 { 1 } else { v };
        let func = self.frame(saved_frame).unwrap().func;
        if let Some(instr) = self.instr_at(func, saved_pc) {
            if let Some(r) = &instr.result {
                self.frame_mut(saved_frame)
                    .unwrap()
                    .locals
                    .insert(r.clone(), Value::Int(coerced));
            }
        }
        self.dios_jump(saved_frame, saved_pc + 1, None)?;
        Ok(())
    }
}
