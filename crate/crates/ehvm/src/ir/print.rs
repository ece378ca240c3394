//! Canonical printer; `parse(print(m))` prints back byte-identically.

use super::*;
use std::fmt::Write;

pub fn print_module(m: &ModuleIR) -> String {
    let mut out = String::new();
    for (_, name, bases) in m.typeinfos.iter() {
        if bases.is_empty() {
            writeln!(out, "typeinfo {name}").unwrap();
        } else {
            writeln!(out, "typeinfo {name} : {}", bases.join(", ")).unwrap();
        }
    }
    for g in &m.globals {
        let bytes: Vec<String> = g.bytes.iter().map(|b| b.to_string()).collect();
        writeln!(out, "global {} = [{}]", g.name, bytes.join(", ")).unwrap();
    }
    for f in &m.functions {
        print_function(&mut out, f);
    }
    out
}

fn print_function(out: &mut String, f: &FunctionIR) {
    write!(out, "fn {}({})", f.name, f.params.iter().map(|p| format!("%{p}")).collect::<Vec<_>>().join(", ")).unwrap();
    if f.nounwind {
        write!(out, " nounwind").unwrap();
    }
    if let Some(p) = &f.personality {
        write!(out, " personality {p}").unwrap();
    }
    if let Some(l) = &f.lsda_ref {
        write!(out, " lsda {l}").unwrap();
    }
    writeln!(out, " {{").unwrap();
    for b in &f.blocks {
        writeln!(out, "{}:", b.label).unwrap();
        for i in &b.instrs {
            write!(out, "  ").unwrap();
            if let Some(r) = &i.result {
                write!(out, "%{r} = ").unwrap();
            }
            print_op(out, &i.op);
            writeln!(out).unwrap();
        }
    }
    writeln!(out, "}}").unwrap();
}

fn operand(o: &Operand) -> String {
    match o {
        Operand::Local(n) => format!("%{n}"),
        Operand::Imm(v) => v.to_string(),
        Operand::Symbol(s) => s.clone(),
    }
}

fn print_op(out: &mut String, op: &Op) {
    match op {
        Op::Alloca { cells } => write!(out, "alloca {cells}").unwrap(),
        Op::Load { addr } => write!(out, "load {}", operand(addr)).unwrap(),
        Op::Store { value, addr } => {
            write!(out, "store {}, {}", operand(value), operand(addr)).unwrap()
        }
        Op::Bin { kind, lhs, rhs } => write!(
            out,
            "{} {}, {}",
            kind.mnemonic(),
            operand(lhs),
            operand(rhs)
        )
        .unwrap(),
        Op::Br { target } => write!(out, "br %{target}").unwrap(),
        Op::CondBr {
            cond,
            then_label,
            else_label,
        } => write!(
            out,
            "condbr {}, %{then_label}, %{else_label}",
            operand(cond)
        )
        .unwrap(),
        Op::Ret { value } => match value {
            Some(v) => write!(out, "ret {}", operand(v)).unwrap(),
            None => write!(out, "ret").unwrap(),
        },
        Op::Call { callee, args } => {
            write!(out, "call {callee}({})", args.iter().map(operand).collect::<Vec<_>>().join(", ")).unwrap()
        }
        Op::Invoke {
            callee,
            args,
            normal,
            unwind,
        } => write!(
            out,
            "invoke {callee}({}) to %{normal} unwind %{unwind}",
            args.iter().map(operand).collect::<Vec<_>>().join(", ")
        )
        .unwrap(),
        Op::Landingpad { clauses } => {
            write!(out, "landingpad").unwrap();
            for c in clauses {
                match c {
                    Clause::Catch(Some(t)) => write!(out, " catch {t}").unwrap(),
                    Clause::Catch(None) => write!(out, " catch any").unwrap(),
                    Clause::Filter(ts) => {
                        write!(out, " filter [{}]", ts.join(", ")).unwrap()
                    }
                    Clause::Cleanup => write!(out, " cleanup").unwrap(),
                }
            }
        }
        Op::Resume { value } => write!(out, "resume {}", operand(value)).unwrap(),
        Op::Phi { incomings } => {
            let parts: Vec<String> = incomings
                .iter()
                .map(|(v, l)| format!("[{}, %{l}]", operand(v)))
                .collect();
            write!(out, "phi {}", parts.join(", ")).unwrap()
        }
        Op::Const { value } => write!(out, "const {}", operand(value)).unwrap(),
        Op::Gep { base, offset } => write!(out, "gep {}, {offset}", operand(base)).unwrap(),
        Op::Trap => write!(out, "trap").unwrap(),
    }
}
