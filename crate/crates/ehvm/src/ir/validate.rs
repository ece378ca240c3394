//! Structural validation. A module that validates cleanly has no
//! execution-time structural surprises: every call target resolves, blocks
//! are properly terminated, landing pads sit only on unwind edges and the
//! typeinfo graph is acyclic.

use super::*;
use crate::builtins::{self, Arity};
use std::collections::{HashMap, HashSet};
use std::fmt;

/// One validation finding, located by function/block/pc where applicable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: Option<String>,
    pub block: Option<String>,
    pub pc: Option<u32>,
    pub msg: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.function, &self.block, self.pc) {
            (Some(func), Some(block), Some(pc)) => {
                write!(f, "{func} {block} pc {pc}: {}", self.msg)
            }
            (Some(func), Some(block), None) => write!(f, "{func} {block}: {}", self.msg),
            (Some(func), None, _) => write!(f, "{func}: {}", self.msg),
            _ => write!(f, "module: {}", self.msg),
        }
    }
}

struct Ctx<'m> {
    m: &'m ModuleIR,
    out: Vec<Diagnostic>,
}

impl Ctx<'_> {
    fn module(&mut self, msg: impl Into<String>) {
        self.out.push(Diagnostic {
            function: None,
            block: None,
            pc: None,
            msg: msg.into(),
        });
    }

    fn func(&mut self, f: &FunctionIR, msg: impl Into<String>) {
        self.out.push(Diagnostic {
            function: Some(f.name.clone()),
            block: None,
            pc: None,
            msg: msg.into(),
        });
    }

    fn at(&mut self, f: &FunctionIR, block: &str, pc: u32, msg: impl Into<String>) {
        self.out.push(Diagnostic {
            function: Some(f.name.clone()),
            block: Some(block.to_string()),
            pc: Some(pc),
            msg: msg.into(),
        });
    }
}

pub fn validate(m: &ModuleIR) -> Vec<Diagnostic> {
    let mut ctx = Ctx { m, out: Vec::new() };

    // One module-level namespace: functions, typeinfos and globals.
    let mut names: HashSet<&str> = HashSet::new();
    for (_, n, _) in m.typeinfos.iter() {
        names.insert(n);
    }
    for g in &m.globals {
        if !names.insert(&g.name) {
            ctx.module(format!("duplicate definition of {}", g.name));
        }
    }
    for f in &m.functions {
        if !names.insert(&f.name) {
            ctx.module(format!("duplicate definition of {}", f.name));
        }
    }

    // Typeinfo DAG: bases resolve, no cycles.
    for (_, name, bases) in m.typeinfos.iter() {
        for b in bases {
            if m.typeinfos.id_of(b).is_none() {
                ctx.module(format!("typeinfo {name}: unresolved base {b}"));
            }
        }
    }
    if let Some(cycle_member) = find_typeinfo_cycle(&m.typeinfos) {
        ctx.module(format!("typeinfo cycle through {cycle_member}"));
    }

    for f in &m.functions {
        validate_function(&mut ctx, f);
    }

    ctx.out
}

fn find_typeinfo_cycle(reg: &TypeInfoRegistry) -> Option<String> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let n = reg.len();
    let mut mark = vec![0u8; n + 1];
    fn visit(reg: &TypeInfoRegistry, id: u32, mark: &mut [u8]) -> Option<u32> {
        match mark[id as usize] {
            1 => return Some(id),
            2 => return None,
            _ => {}
        }
        mark[id as usize] = 1;
        for b in reg.bases_of(id) {
            if let Some(bid) = reg.id_of(b) {
                if let Some(c) = visit(reg, bid, mark) {
                    return Some(c);
                }
            }
        }
        mark[id as usize] = 2;
        None
    }
    for id in 1..=n as u32 {
        if let Some(c) = visit(reg, id, &mut mark) {
            return reg.name_of(c).map(|s| s.to_string());
        }
    }
    None
}

fn validate_function(ctx: &mut Ctx, f: &FunctionIR) {
    if let Some(p) = &f.personality {
        if !builtins::is_personality(p) {
            ctx.func(f, format!("unknown personality {p}"));
        }
    }
    if let Some(l) = &f.lsda_ref {
        if ctx.m.global(l).is_none() {
            ctx.func(f, format!("lsda reference {l} does not resolve to a global"));
        }
    }

    let mut block_labels: HashSet<&str> = HashSet::new();
    for b in &f.blocks {
        if !block_labels.insert(&b.label) {
            ctx.func(f, format!("duplicate block label {}", b.label));
        }
        if b.instrs.is_empty() {
            ctx.func(f, format!("block {} is empty", b.label));
        }
    }

    // Which blocks are unwind-edge targets, and which are branch/normal targets.
    let mut unwind_targets: HashSet<&str> = HashSet::new();
    for b in &f.blocks {
        for i in &b.instrs {
            if let Op::Invoke { unwind, .. } = &i.op {
                unwind_targets.insert(unwind);
            }
        }
    }

    // Locals: single static assignment, collected for operand checks.
    let mut defined: HashMap<&str, &Op> = HashMap::new();
    for p in &f.params {
        defined.insert(p, &Op::Trap); // params have no defining op; placeholder
    }
    for b in &f.blocks {
        for i in &b.instrs {
            if let Some(r) = &i.result {
                if defined.insert(r, &i.op).is_some() {
                    ctx.func(f, format!("%{r} is assigned more than once"));
                }
            }
        }
    }

    let layout = f.layout();
    let mut pc: u32 = 0;
    for b in &f.blocks {
        for (ii, i) in b.instrs.iter().enumerate() {
            let last = ii + 1 == b.instrs.len();
            validate_instr(ctx, f, b, pc, i, last, &defined, &unwind_targets);
            pc += 1;
        }
    }
    debug_assert_eq!(pc, layout.len());
}

#[allow(clippy::too_many_arguments)]
fn validate_instr(
    ctx: &mut Ctx,
    f: &FunctionIR,
    b: &BlockIR,
    pc: u32,
    i: &InstructionIR,
    last: bool,
    defined: &HashMap<&str, &Op>,
    unwind_targets: &HashSet<&str>,
) {
    let m = ctx.m;

    let check_operand = |ctx: &mut Ctx, o: &Operand| match o {
        Operand::Local(n) => {
            if !defined.contains_key(n.as_str()) {
                ctx.at(f, &b.label, pc, format!("use of undefined local %{n}"));
            }
        }
        Operand::Symbol(s) => {
            let known = m.typeinfos.id_of(s).is_some()
                || m.global(s).is_some()
                || m.function(s).is_some()
                || builtins::lookup(s).is_some();
            if !known {
                ctx.at(f, &b.label, pc, format!("unresolved reference {s}"));
            }
        }
        Operand::Imm(_) => {}
    };

    let check_label = |ctx: &mut Ctx, l: &str| {
        if f.block_index(l).is_none() {
            ctx.at(f, &b.label, pc, format!("unknown block label %{l}"));
        }
    };

    // Structural position rules.
    let is_terminator = i.op.is_plain_terminator() || is_noreturn_call(&i.op);
    if last && !is_terminator {
        ctx.at(f, &b.label, pc, "block does not end with a terminator");
    }
    if !last && i.op.is_plain_terminator() {
        ctx.at(f, &b.label, pc, "terminator in the middle of a block");
    }

    match &i.op {
        Op::Landingpad { clauses } => {
            let first_of_block = layout_head(f, &b.label) == Some(pc);
            if !first_of_block || !unwind_targets.contains(b.label.as_str()) {
                ctx.at(f, &b.label, pc, "misplaced landingpad");
            }
            if i.result.is_none() {
                ctx.at(f, &b.label, pc, "landingpad requires a result");
            }
            if clauses.iter().filter(|c| matches!(c, Clause::Cleanup)).count() > 1 {
                ctx.at(f, &b.label, pc, "more than one cleanup clause");
            }
            for c in clauses {
                match c {
                    Clause::Catch(Some(t)) => {
                        if m.typeinfos.id_of(t).is_none() {
                            ctx.at(f, &b.label, pc, format!("unresolved typeinfo {t}"));
                        }
                    }
                    Clause::Filter(ts) => {
                        for t in ts {
                            if m.typeinfos.id_of(t).is_none() {
                                ctx.at(f, &b.label, pc, format!("unresolved typeinfo {t}"));
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        Op::Resume { value } => {
            check_operand(ctx, value);
            match value {
                Operand::Local(n) => {
                    if !matches!(defined.get(n.as_str()), Some(Op::Landingpad { .. })) {
                        ctx.at(f, &b.label, pc, "resume operand is not a landingpad result");
                    }
                }
                _ => ctx.at(f, &b.label, pc, "resume operand is not a landingpad result"),
            }
        }
        Op::Call { callee, args } | Op::Invoke { callee, args, .. } => {
            for a in args {
                check_operand(ctx, a);
            }
            if let Some(bi) = builtins::lookup(callee) {
                match builtins::arity(bi) {
                    Arity::Exact(n) if args.len() != n => {
                        ctx.at(f, &b.label, pc, format!("{callee} expects {n} argument(s), got {}", args.len()));
                    }
                    Arity::AtLeast(n) if args.len() < n => {
                        ctx.at(f, &b.label, pc, format!("{callee} expects at least {n} argument(s), got {}", args.len()));
                    }
                    _ => {}
                }
            } else if let Some(g) = m.function(callee) {
                if args.len() != g.params.len() {
                    ctx.at(f, &b.label, pc, format!("{callee} expects {} argument(s), got {}", g.params.len(), args.len()));
                }
            } else {
                ctx.at(f, &b.label, pc, format!("unresolved call target {callee}"));
            }
            if let Op::Invoke { normal, unwind, .. } = &i.op {
                check_label(ctx, normal);
                check_label(ctx, unwind);
                if let Some(ub) = f.block(unwind) {
                    let starts_with_pad =
                        matches!(ub.instrs.first().map(|x| &x.op), Some(Op::Landingpad { .. }));
                    if !starts_with_pad {
                        ctx.at(f, &b.label, pc, format!("unwind target %{unwind} does not start with a landingpad"));
                    }
                }
            }
        }
        Op::Br { target } => check_label(ctx, target),
        Op::CondBr {
            cond,
            then_label,
            else_label,
        } => {
            check_operand(ctx, cond);
            check_label(ctx, then_label);
            check_label(ctx, else_label);
        }
        Op::Phi { incomings } => {
            for (v, l) in incomings {
                check_operand(ctx, v);
                check_label(ctx, l);
            }
        }
        Op::Load { addr } => check_operand(ctx, addr),
        Op::Store { value, addr } => {
            check_operand(ctx, value);
            check_operand(ctx, addr);
        }
        Op::Bin { lhs, rhs, .. } => {
            check_operand(ctx, lhs);
            check_operand(ctx, rhs);
        }
        Op::Ret { value: Some(v) } => check_operand(ctx, v),
        Op::Const { value } => check_operand(ctx, value),
        Op::Gep { base, .. } => check_operand(ctx, base),
        _ => {}
    }
}

fn is_noreturn_call(op: &Op) -> bool {
    match op {
        Op::Call { callee, .. } => builtins::lookup(callee).is_some_and(builtins::is_noreturn),
        _ => false,
    }
}

fn layout_head(f: &FunctionIR, label: &str) -> Option<u32> {
    let l = f.layout();
    f.block_index(label).map(|bi| l.block_head(bi as u32))
}
