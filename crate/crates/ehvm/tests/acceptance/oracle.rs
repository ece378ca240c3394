//! Reference interpreter with direct dynamic handler-stack semantics: no
//! LSDA, no unwinder, no personality. On a throw it walks the live frames
//! innermost-first, matching each suspended invoke's landing-pad clauses
//! against the thrown type by DAG reachability, running cleanup pads on the
//! way out. Everything it shares with the checked pipeline is the parsed IR.

use ehvm::ir::{BinKind, Clause, FnLayout, FunctionIR, InstructionIR, ModuleIR, Op, Operand};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OVal {
    Int(i64),
    Addr(u32, u32),
    Pair(u32, i64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OOutcome {
    Halted(i64),
    Fault(&'static str),
}

pub fn outcome_key(o: &OOutcome) -> String {
    match o {
        OOutcome::Halted(c) => format!("halted({c})"),
        OOutcome::Fault(k) => format!("fault({k})"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OVisit {
    pub function: String,
    pub pad_pc: u32,
    pub selector: i64,
}

pub struct OracleResult {
    pub outcome: OOutcome,
    pub handlers: Vec<OVisit>,
}

enum OData {
    Cells(Vec<Option<OVal>>),
    Bytes(Vec<u8>),
    /// Exception header: index into `excs`.
    Header(usize),
}

struct OObj {
    data: OData,
    live: bool,
}

struct OExc {
    typeinfo: u32,
    payload: u32,
    dtor: i64,
    handler_count: u32,
    in_flight: bool,
}

struct OFrame {
    id: u32,
    func: usize,
    pc: u32,
    prev_block: Option<u32>,
    locals: HashMap<String, OVal>,
    allocas: Vec<u32>,
    /// Exception header object to destroy once this (destructor) frame returns.
    destroy_on_return: Option<u32>,
}

struct Fault(&'static str);

type OResult<T> = Result<T, Fault>;

/// Catch-clause selectors, computed independently of the pass: dense from 1
/// in first-appearance order over the function's catch clauses (the
/// catch-all counts as one entry). Filter clauses take dense negatives by
/// appearance order, computed at the use site.
fn assign_catch_selectors(f: &FunctionIR) -> Vec<(Option<String>, i64)> {
    let mut catches: Vec<(Option<String>, i64)> = Vec::new();
    for b in &f.blocks {
        for i in &b.instrs {
            let Op::Landingpad { clauses } = &i.op else { continue };
            for c in clauses {
                if let Clause::Catch(ty) = c {
                    if !catches.iter().any(|(t, _)| t == ty) {
                        let next = catches.len() as i64 + 1;
                        catches.push((ty.clone(), next));
                    }
                }
            }
        }
    }
    catches
}

pub struct Oracle<'m> {
    module: &'m ModuleIR,
    layouts: Vec<FnLayout>,
    selectors: Vec<Vec<(Option<String>, i64)>>,
    objs: Vec<OObj>,
    excs: Vec<OExc>,
    globals: HashMap<&'m str, u32>,
    frames: Vec<OFrame>,
    next_frame_id: u32,
    caught: Vec<u32>,
    in_cleanup: bool,
    mask: bool,
    handlers: Vec<OVisit>,
}

impl<'m> Oracle<'m> {
    pub fn run(module: &'m ModuleIR) -> OracleResult {
        let mut o = Oracle {
            module,
            layouts: module.functions.iter().map(|f| f.layout()).collect(),
            selectors: module
                .functions
                .iter()
                .map(assign_catch_selectors)
                .collect(),
            objs: Vec::new(),
            excs: Vec::new(),
            globals: HashMap::new(),
            frames: Vec::new(),
            next_frame_id: 1,
            caught: Vec::new(),
            in_cleanup: false,
            mask: false,
            handlers: Vec::new(),
        };
        for g in &module.globals {
            o.objs.push(OObj {
                data: OData::Bytes(g.bytes.clone()),
                live: true,
            });
            o.globals.insert(&g.name, o.objs.len() as u32);
        }
        let main = module.function_index("@main").expect("oracle needs @main");
        o.push_frame(main, Vec::new());
        let outcome = match o.interp() {
            Ok(code) => OOutcome::Halted(code),
            Err(Fault(kind)) => OOutcome::Fault(kind),
        };
        OracleResult {
            outcome,
            handlers: o.handlers,
        }
    }

    fn push_frame(&mut self, func: usize, args: Vec<OVal>) {
        let mut locals = HashMap::new();
        for (p, v) in self.module.functions[func].params.iter().zip(args) {
            locals.insert(p.clone(), v);
        }
        self.frames.push(OFrame {
            id: self.next_frame_id,
            func,
            pc: 0,
            prev_block: None,
            locals,
            allocas: Vec::new(),
            destroy_on_return: None,
        });
        self.next_frame_id += 1;
    }

    fn alloc_cells(&mut self, n: usize) -> u32 {
        self.objs.push(OObj {
            data: OData::Cells(vec![None; n]),
            live: true,
        });
        self.objs.len() as u32
    }

    fn check(&self, id: u32) -> OResult<()> {
        match self.objs.get(id.wrapping_sub(1) as usize) {
            None => Err(Fault("bounds")),
            Some(o) if !o.live => Err(Fault("use-after-free")),
            Some(_) => Ok(()),
        }
    }

    fn load(&self, obj: u32, off: u32) -> OResult<OVal> {
        self.check(obj)?;
        match &self.objs[obj as usize - 1].data {
            OData::Cells(cells) => match cells.get(off as usize) {
                None => Err(Fault("bounds")),
                Some(None) => Err(Fault("uninitialized")),
                Some(Some(v)) => Ok(*v),
            },
            OData::Bytes(bytes) => bytes
                .get(off as usize)
                .map(|b| OVal::Int(*b as i64))
                .ok_or(Fault("bounds")),
            OData::Header(_) => Err(Fault("bounds")),
        }
    }

    fn store(&mut self, obj: u32, off: u32, v: OVal) -> OResult<()> {
        self.check(obj)?;
        match &mut self.objs[obj as usize - 1].data {
            OData::Cells(cells) => match cells.get_mut(off as usize) {
                None => Err(Fault("bounds")),
                Some(slot) => {
                    *slot = Some(v);
                    Ok(())
                }
            },
            OData::Bytes(bytes) => match (bytes.get_mut(off as usize), v) {
                (Some(slot), OVal::Int(i)) if (0..=255).contains(&i) => {
                    *slot = i as u8;
                    Ok(())
                }
                (Some(_), _) => Err(Fault("trap")),
                (None, _) => Err(Fault("bounds")),
            },
            OData::Header(_) => Err(Fault("bounds")),
        }
    }

    fn free(&mut self, obj: u32) -> OResult<()> {
        self.check(obj)?;
        self.objs[obj as usize - 1].live = false;
        Ok(())
    }

    fn free_frame_allocas(&mut self, frame: &OFrame) {
        for a in &frame.allocas {
            if self.objs[*a as usize - 1].live {
                self.objs[*a as usize - 1].live = false;
            }
        }
    }

    fn eval(&self, o: &Operand) -> OResult<OVal> {
        let top = self.frames.last().unwrap();
        match o {
            Operand::Imm(v) => Ok(OVal::Int(*v)),
            Operand::Local(n) => top.locals.get(n).copied().ok_or(Fault("uninitialized")),
            Operand::Symbol(s) => {
                if let Some(id) = self.globals.get(s.as_str()) {
                    Ok(OVal::Addr(*id, 0))
                } else if let Some(fid) = self.module.function_id(s) {
                    Ok(OVal::Int(fid))
                } else if let Some(tid) = self.module.typeinfos.id_of(s) {
                    Ok(OVal::Int(tid as i64))
                } else {
                    Err(Fault("trap"))
                }
            }
        }
    }

    fn instr_at(&self, func: usize, pc: u32) -> Option<&'m InstructionIR> {
        let module = self.module;
        let (b, i) = self.layouts[func].locate(pc)?;
        Some(&module.functions[func].blocks[b as usize].instrs[i as usize])
    }

    fn branch(&mut self, label: &str) {
        let (func, pc) = {
            let top = self.frames.last().unwrap();
            (top.func, top.pc)
        };
        let old = self.layouts[func].block_of(pc);
        let bi = self.module.functions[func].block_index(label).unwrap() as u32;
        let head = self.layouts[func].block_head(bi);
        let top = self.frames.last_mut().unwrap();
        top.prev_block = old;
        top.pc = head;
    }

    fn set_result(&mut self, instr: &InstructionIR, v: OVal) {
        if let Some(r) = &instr.result {
            self.frames.last_mut().unwrap().locals.insert(r.clone(), v);
        }
    }

    fn advance(&mut self) {
        self.frames.last_mut().unwrap().pc += 1;
    }

    /// Complete a builtin call in `instr`: write the value and take the
    /// normal edge (or fall through for plain calls).
    fn complete(&mut self, instr: &'m InstructionIR, v: Option<OVal>) {
        if let Some(v) = v {
            self.set_result(instr, v);
        }
        match &instr.op {
            Op::Invoke { normal, .. } => self.branch(normal),
            _ => self.advance(),
        }
    }

    fn exc_of(&self, hdr: u32) -> OResult<usize> {
        self.check(hdr)?;
        match &self.objs[hdr as usize - 1].data {
            OData::Header(i) => Ok(*i),
            _ => Err(Fault("trap")),
        }
    }

    fn header_of(&self, exc: usize) -> u32 {
        self.objs
            .iter()
            .position(|o| matches!(o.data, OData::Header(e) if e == exc))
            .unwrap() as u32
            + 1
    }

    fn destroy_exception(&mut self, hdr: u32) -> OResult<()> {
        let exc = self.exc_of(hdr)?;
        let payload = self.excs[exc].payload;
        if self.objs[payload as usize - 1].live {
            self.free(payload)?;
        }
        self.free(hdr)
    }

    /// Main loop; returns the exit code of @main.
    fn interp(&mut self) -> OResult<i64> {
        loop {
            let (func, pc) = {
                let top = self.frames.last().unwrap();
                (top.func, top.pc)
            };
            let instr = self.instr_at(func, pc).ok_or(Fault("trap"))?;
            match &instr.op {
                Op::Alloca { cells } => {
                    let a = self.alloc_cells(*cells as usize);
                    self.frames.last_mut().unwrap().allocas.push(a);
                    self.set_result(instr, OVal::Addr(a, 0));
                    self.advance();
                }
                Op::Load { addr } => {
                    let v = match self.eval(addr)? {
                        OVal::Addr(o, off) => self.load(o, off)?,
                        _ => return Err(Fault("trap")),
                    };
                    self.set_result(instr, v);
                    self.advance();
                }
                Op::Store { value, addr } => {
                    let v = self.eval(value)?;
                    match self.eval(addr)? {
                        OVal::Addr(o, off) => self.store(o, off, v)?,
                        _ => return Err(Fault("trap")),
                    }
                    self.advance();
                }
                Op::Bin { kind, lhs, rhs } => {
                    let l = self.eval(lhs)?;
                    let r = self.eval(rhs)?;
                    let v = match (kind, l, r) {
                        (BinKind::Add, OVal::Int(a), OVal::Int(b)) => OVal::Int(a.wrapping_add(b)),
                        (BinKind::Sub, OVal::Int(a), OVal::Int(b)) => OVal::Int(a.wrapping_sub(b)),
                        (BinKind::Lt, OVal::Int(a), OVal::Int(b)) => OVal::Int((a < b) as i64),
                        (BinKind::Eq, a, b) => OVal::Int((a == b) as i64),
                        _ => return Err(Fault("trap")),
                    };
                    self.set_result(instr, v);
                    self.advance();
                }
                Op::Br { target } => self.branch(target),
                Op::CondBr {
                    cond,
                    then_label,
                    else_label,
                } => {
                    let c = match self.eval(cond)? {
                        OVal::Int(v) => v,
                        _ => return Err(Fault("trap")),
                    };
                    let label = if c != 0 { then_label } else { else_label };
                    self.branch(label);
                }
                Op::Ret { value } => {
                    let v = match value {
                        Some(o) => Some(self.eval(o)?),
                        None => None,
                    };
                    if let Some(code) = self.do_return(v)? {
                        return Ok(code);
                    }
                }
                Op::Landingpad { .. } => self.advance(),
                Op::Resume { value } => {
                    let hdr = match self.eval(value)? {
                        OVal::Pair(h, _) => h,
                        OVal::Addr(h, 0) => h,
                        _ => return Err(Fault("trap")),
                    };
                    let exc = self.exc_of(hdr)?;
                    // Continue outward from below the pad frame.
                    let below = self.frames.len() - 1;
                    self.propagate(exc, below)?;
                }
                Op::Phi { incomings } => {
                    let prev = self.frames.last().unwrap().prev_block;
                    let mut picked = None;
                    for (v, label) in incomings {
                        let bi = self.module.functions[func]
                            .block_index(label)
                            .map(|b| b as u32);
                        if bi == prev {
                            picked = Some(v.clone());
                            break;
                        }
                    }
                    let Some(v) = picked else { return Err(Fault("uninitialized")) };
                    let val = self.eval(&v)?;
                    self.set_result(instr, val);
                    self.advance();
                }
                Op::Const { value } => {
                    let v = self.eval(value)?;
                    self.set_result(instr, v);
                    self.advance();
                }
                Op::Gep { base, offset } => {
                    let v = match self.eval(base)? {
                        OVal::Addr(o, off) => {
                            let n = off as i64 + offset;
                            if n < 0 {
                                return Err(Fault("bounds"));
                            }
                            OVal::Addr(o, n as u32)
                        }
                        OVal::Pair(h, sel) => match offset {
                            0 => OVal::Addr(h, 0),
                            1 => OVal::Int(sel),
                            _ => return Err(Fault("bounds")),
                        },
                        OVal::Int(_) => return Err(Fault("trap")),
                    };
                    self.set_result(instr, v);
                    self.advance();
                }
                Op::Trap => return Err(Fault("trap")),
                Op::Call { callee, args } | Op::Invoke { callee, args, .. } => {
                    let argv: Vec<OVal> =
                        args.iter().map(|a| self.eval(a)).collect::<OResult<_>>()?;
                    self.enter(instr, callee, argv)?;
                }
            }
        }
    }

    /// Returns Some(exit code) when the root frame returned.
    fn do_return(&mut self, v: Option<OVal>) -> OResult<Option<i64>> {
        let frame = self.frames.pop().unwrap();
        self.free_frame_allocas(&frame);
        if let Some(hdr) = frame.destroy_on_return {
            self.destroy_exception(hdr)?;
        }
        if self.frames.is_empty() {
            return Ok(Some(match v {
                Some(OVal::Int(c)) => c,
                _ => 0,
            }));
        }
        let (pfunc, ppc) = {
            let parent = self.frames.last().unwrap();
            (parent.func, parent.pc)
        };
        let instr = self.instr_at(pfunc, ppc).ok_or(Fault("trap"))?;
        match &instr.op {
            Op::Call { .. } => {
                if let Some(val) = v {
                    self.set_result(instr, val);
                }
                self.advance();
            }
            Op::Invoke { normal, .. } => {
                if let Some(val) = v {
                    self.set_result(instr, val);
                }
                self.branch(normal);
            }
            _ => return Err(Fault("trap")),
        }
        Ok(None)
    }

    fn enter(&mut self, instr: &'m InstructionIR, callee: &str, args: Vec<OVal>) -> OResult<()> {
        if let Some(func) = self.module.function_index(callee) {
            self.push_frame(func, args);
            return Ok(());
        }
        match callee {
            "@__vm_choose" => {
                // deterministic first branch
                self.complete(instr, Some(OVal::Int(0)));
            }
            "@__vm_mask" => {
                let prev = self.mask;
                self.mask = matches!(args[0], OVal::Int(v) if v != 0);
                self.complete(instr, Some(OVal::Int(prev as i64)));
            }
            "@malloc" => {
                let OVal::Int(n) = args[0] else { return Err(Fault("trap")) };
                let a = self.alloc_cells(n.max(0) as usize);
                self.complete(instr, Some(OVal::Addr(a, 0)));
            }
            "@free" => {
                let OVal::Addr(o, 0) = args[0] else { return Err(Fault("use-after-free")) };
                self.free(o)?;
                self.complete(instr, None);
            }
            "@setjmp" => {
                let OVal::Addr(env, off) = args[0] else { return Err(Fault("trap")) };
                let (id, pc) = {
                    let top = self.frames.last().unwrap();
                    (top.id, top.pc)
                };
                self.store(env, off, OVal::Int(id as i64))?;
                self.store(env, off + 1, OVal::Int(pc as i64))?;
                self.complete(instr, Some(OVal::Int(0)));
            }
            "@longjmp" => {
                let OVal::Addr(env, off) = args[0] else { return Err(Fault("trap")) };
                let OVal::Int(v) = args[1] else { return Err(Fault("trap")) };
                let OVal::Int(fid) = self.load(env, off)? else { return Err(Fault("trap")) };
                let OVal::Int(pc) = self.load(env, off + 1)? else { return Err(Fault("trap")) };
                let Some(idx) = self.frames.iter().position(|f| f.id as i64 == fid) else {
                    return Err(Fault("use-after-free"));
                };
                while self.frames.len() > idx + 1 {
                    let f = self.frames.pop().unwrap();
                    self.free_frame_allocas(&f);
                }
                let setjmp_pc = pc as u32;
                let coerced = if v == 0 { 1 } else { v };
                let func = self.frames.last().unwrap().func;
                {
                    let old = self.layouts[func].block_of(self.frames.last().unwrap().pc);
                    let target = self.frames.last_mut().unwrap();
                    target.prev_block = old;
                    target.pc = setjmp_pc + 1;
                }
                if let Some(i) = self.instr_at(func, setjmp_pc) {
                    if let Some(r) = &i.result {
                        self.frames
                            .last_mut()
                            .unwrap()
                            .locals
                            .insert(r.clone(), OVal::Int(coerced));
                    }
                }
            }
            "@typeid.for" => {
                let ty = match &instr.op {
                    Op::Call { args, .. } => match &args[0] {
                        Operand::Symbol(s) => s.clone(),
                        _ => return Err(Fault("trap")),
                    },
                    _ => return Err(Fault("trap")),
                };
                let func = self.frames.last().unwrap().func;
                let sel = self.selectors[func]
                    .iter()
                    .find(|(t, _)| t.as_deref() == Some(ty.as_str()))
                    .map(|(_, s)| *s)
                    .ok_or(Fault("trap"))?;
                self.complete(instr, Some(OVal::Int(sel)));
            }
            "@__cxa_allocate_exception" => {
                let OVal::Int(n) = args[0] else { return Err(Fault("trap")) };
                let a = self.alloc_cells(n.max(0) as usize);
                self.complete(instr, Some(OVal::Addr(a, 0)));
            }
            "@__cxa_throw" => {
                let OVal::Addr(payload, 0) = args[0] else { return Err(Fault("trap")) };
                let OVal::Int(tid) = args[1] else { return Err(Fault("trap")) };
                let OVal::Int(dtor) = args[2] else { return Err(Fault("trap")) };
                if self.in_cleanup {
                    return Err(Fault("terminate"));
                }
                self.excs.push(OExc {
                    typeinfo: tid as u32,
                    payload,
                    dtor,
                    handler_count: 0,
                    in_flight: true,
                });
                let exc = self.excs.len() - 1;
                self.objs.push(OObj {
                    data: OData::Header(exc),
                    live: true,
                });
                let from = self.frames.len();
                self.propagate(exc, from)?;
            }
            "@__cxa_begin_catch" => {
                let hdr = match args[0] {
                    OVal::Addr(h, 0) => h,
                    OVal::Pair(h, _) => h,
                    _ => return Err(Fault("trap")),
                };
                let exc = self.exc_of(hdr)?;
                self.excs[exc].handler_count += 1;
                self.excs[exc].in_flight = false;
                self.caught.push(hdr);
                self.in_cleanup = false;
                let payload = self.excs[exc].payload;
                self.complete(instr, Some(OVal::Addr(payload, 0)));
            }
            "@__cxa_end_catch" => {
                let Some(hdr) = self.caught.pop() else { return Err(Fault("terminate")) };
                let exc = self.exc_of(hdr)?;
                self.excs[exc].handler_count -= 1;
                if self.excs[exc].handler_count == 0 && !self.excs[exc].in_flight {
                    let dtor = self.excs[exc].dtor;
                    if dtor != 0 {
                        let payload = self.excs[exc].payload;
                        let f = self.module.function_by_id(dtor).ok_or(Fault("trap"))?;
                        let func = self.module.function_index(&f.name).unwrap();
                        self.push_frame(func, vec![OVal::Addr(payload, 0)]);
                        self.frames.last_mut().unwrap().destroy_on_return = Some(hdr);
                        return Ok(());
                    }
                    self.destroy_exception(hdr)?;
                }
                self.complete(instr, None);
            }
            "@__cxa_rethrow" => {
                let Some(hdr) = self.caught.last().copied() else {
                    return Err(Fault("terminate"));
                };
                let exc = self.exc_of(hdr)?;
                self.excs[exc].in_flight = true;
                let from = self.frames.len();
                self.propagate(exc, from)?;
            }
            "@_Unwind_Resume" => {
                // post-pass spelling of resume; accepted for robustness
                let hdr = match args[0] {
                    OVal::Pair(h, _) => h,
                    OVal::Addr(h, 0) => h,
                    _ => return Err(Fault("trap")),
                };
                let exc = self.exc_of(hdr)?;
                let below = self.frames.len() - 1;
                self.propagate(exc, below)?;
            }
            _ => return Err(Fault("trap")),
        }
        Ok(())
    }

    /// Direct handler search: walk frames from just below index `from_top`
    /// toward the root. Each frame suspended at an invoke offers its pad's
    /// clauses in order; the first catch or filter decision wins, a cleanup
    /// clause applies when nothing else did. No handler anywhere means the
    /// deterministic no-unwind branch: terminate on the spot.
    fn propagate(&mut self, exc: usize, from_top: usize) -> OResult<()> {
        let module = self.module;
        let thrown = self.excs[exc].typeinfo;
        let reg = &module.typeinfos;
        let mut i = from_top;
        while i > 0 {
            i -= 1;
            let (func_idx, pc) = {
                let f = &self.frames[i];
                (f.func, f.pc)
            };
            let func = &module.functions[func_idx];
            if func.personality.is_none() {
                continue;
            }
            let Some(instr) = self.instr_at(func_idx, pc) else {
                return Err(Fault("trap"));
            };
            let Op::Invoke { unwind, .. } = &instr.op else { continue };
            let Some(pad_block) = func.block(unwind) else { continue };
            let Some(Op::Landingpad { clauses }) = pad_block.instrs.first().map(|x| &x.op)
            else {
                continue;
            };

            // Dense negative numbering for filter clauses: count the filter
            // clauses of this function that appear before this pad.
            let mut filter_ordinal = 0i64;
            'blocks: for b in &func.blocks {
                if b.label == *unwind {
                    break 'blocks;
                }
                for bi in &b.instrs {
                    if let Op::Landingpad { clauses } = &bi.op {
                        filter_ordinal += clauses
                            .iter()
                            .filter(|c| matches!(c, Clause::Filter(_)))
                            .count() as i64;
                    }
                }
            }

            let mut decision: Option<i64> = None;
            let mut cleanup_here = false;
            for c in clauses {
                match c {
                    Clause::Catch(ty) => {
                        let matched = match ty {
                            None => true,
                            Some(t) => {
                                let tid = reg.id_of(t).ok_or(Fault("trap"))?;
                                reg.reaches(thrown, tid)
                            }
                        };
                        if matched && decision.is_none() {
                            let sel = self.selectors[func_idx]
                                .iter()
                                .find(|(t, _)| t == ty)
                                .map(|(_, s)| *s)
                                .unwrap();
                            decision = Some(sel);
                        }
                    }
                    Clause::Filter(tys) => {
                        filter_ordinal += 1;
                        let permitted = tys
                            .iter()
                            .any(|t| reg.id_of(t).is_some_and(|tid| reg.reaches(thrown, tid)));
                        if !permitted && decision.is_none() {
                            decision = Some(-filter_ordinal);
                        }
                    }
                    Clause::Cleanup => cleanup_here = true,
                }
            }
            let selector = match decision {
                Some(s) => s,
                None if cleanup_here => 0,
                None => continue,
            };
            self.enter_pad(exc, i, unwind.clone(), selector)?;
            return Ok(());
        }
        Err(Fault("terminate"))
    }

    fn enter_pad(
        &mut self,
        exc: usize,
        frame_index: usize,
        pad_label: String,
        selector: i64,
    ) -> OResult<()> {
        while self.frames.len() > frame_index + 1 {
            let f = self.frames.pop().unwrap();
            self.free_frame_allocas(&f);
        }
        let hdr = self.header_of(exc);
        let func = self.frames[frame_index].func;
        let bi = self.module.functions[func]
            .block_index(&pad_label)
            .unwrap() as u32;
        let pad_pc = self.layouts[func].block_head(bi);
        let pad_instr = self.instr_at(func, pad_pc).unwrap();
        let result = pad_instr.result.clone().ok_or(Fault("terminate"))?;
        let old = self.layouts[func].block_of(self.frames[frame_index].pc);
        {
            let frame = self.frames.last_mut().unwrap();
            frame.prev_block = old;
            frame.pc = pad_pc;
            frame.locals.insert(result, OVal::Pair(hdr, selector));
        }
        if selector == 0 {
            self.in_cleanup = true;
        }
        self.handlers.push(OVisit {
            function: self.module.functions[func].name.clone(),
            pad_pc,
            selector,
        });
        Ok(())
    }
}
