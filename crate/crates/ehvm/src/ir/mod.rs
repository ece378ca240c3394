//! The EHIR language: a minimal exception-aware IR with a textual format,
//! parser, printer and validator.
//!
//! EHIR values are integers and heap addresses only; the single aggregate is
//! the fixed-shape landing-pad result pair (exception address, selector).
//! Code positions are `(function, pc)` where pc indices come from flattening
//! the blocks of a function in declaration order.

mod parse;
mod print;
mod validate;

pub use parse::{parse_module, ParseError};
pub use validate::{validate, Diagnostic};

use std::collections::HashMap;

/// A parsed module: typeinfo hierarchy, global byte constants and functions.
#[derive(Debug, Clone, Default)]
pub struct ModuleIR {
    pub typeinfos: TypeInfoRegistry,
    pub globals: Vec<GlobalIR>,
    pub functions: Vec<FunctionIR>,
}

impl ModuleIR {
    pub fn function(&self, name: &str) -> Option<&FunctionIR> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalIR> {
        self.globals.iter().find(|g| g.name == name)
    }

    /// Stable numeric handle for a function; 0 is reserved for "none".
    pub fn function_id(&self, name: &str) -> Option<i64> {
        self.function_index(name).map(|i| i as i64 + 1)
    }

    pub fn function_by_id(&self, id: i64) -> Option<&FunctionIR> {
        if id <= 0 {
            return None;
        }
        self.functions.get(id as usize - 1)
    }

    /// Render the module in canonical textual form.
    pub fn print(&self) -> String {
        print::print_module(self)
    }
}

/// A named constant byte array.
#[derive(Debug, Clone)]
pub struct GlobalIR {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// Directed acyclic graph of class types used for catch-clause matching.
///
/// Every typeinfo gets a stable positive id in declaration order; id 0 is the
/// null typeinfo (the catch-all marker inside LSDA type tables).
#[derive(Debug, Clone, Default)]
pub struct TypeInfoRegistry {
    names: Vec<String>,
    bases: Vec<Vec<String>>,
    index: HashMap<String, u32>,
}

impl TypeInfoRegistry {
    pub fn insert(&mut self, name: &str, bases: Vec<String>) -> Option<u32> {
        if self.index.contains_key(name) {
            return None;
        }
        let id = self.names.len() as u32 + 1;
        self.names.push(name.to_string());
        self.bases.push(bases);
        self.index.insert(name.to_string(), id);
        Some(id)
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name_of(&self, id: u32) -> Option<&str> {
        if id == 0 {
            return None;
        }
        self.names.get(id as usize - 1).map(|s| s.as_str())
    }

    pub fn bases_of(&self, id: u32) -> &[String] {
        if id == 0 {
            return &[];
        }
        &self.bases[id as usize - 1]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str, &[String])> {
        self.names
            .iter()
            .zip(self.bases.iter())
            .enumerate()
            .map(|(i, (n, b))| (i as u32 + 1, n.as_str(), b.as_slice()))
    }

    /// Reflexive-transitive reachability along base edges: true iff `target`
    /// is `from` itself or one of its (indirect) bases.
    pub fn reaches(&self, from: u32, target: u32) -> bool {
        if from == target {
            return true;
        }
        let mut stack = vec![from];
        let mut seen = vec![false; self.names.len() + 1];
        while let Some(t) = stack.pop() {
            if t == target {
                return true;
            }
            if t == 0 || seen[t as usize] {
                continue;
            }
            seen[t as usize] = true;
            for b in self.bases_of(t) {
                if let Some(bid) = self.id_of(b) {
                    stack.push(bid);
                }
            }
        }
        false
    }
}

/// One function: entry block first, each block ending in one terminator.
#[derive(Debug, Clone)]
pub struct FunctionIR {
    pub name: String,
    pub params: Vec<String>,
    pub nounwind: bool,
    pub personality: Option<String>,
    /// Name of the global holding this function's encoded LSDA; attached by
    /// the lowering pass.
    pub lsda_ref: Option<String>,
    pub blocks: Vec<BlockIR>,
}

impl FunctionIR {
    pub fn block(&self, label: &str) -> Option<&BlockIR> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    /// Flattened pc layout: a bijection between instructions and `[0, N)`.
    pub fn layout(&self) -> FnLayout {
        let mut pcs = Vec::new();
        let mut block_head = Vec::with_capacity(self.blocks.len());
        for (bi, b) in self.blocks.iter().enumerate() {
            block_head.push(pcs.len() as u32);
            for ii in 0..b.instrs.len() {
                pcs.push((bi as u32, ii as u32));
            }
        }
        FnLayout { pcs, block_head }
    }
}

/// Flattened pc indexing for one function.
#[derive(Debug, Clone)]
pub struct FnLayout {
    /// pc -> (block index, instruction index)
    pcs: Vec<(u32, u32)>,
    /// block index -> pc of its first instruction
    block_head: Vec<u32>,
}

impl FnLayout {
    pub fn len(&self) -> u32 {
        self.pcs.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.pcs.is_empty()
    }

    pub fn locate(&self, pc: u32) -> Option<(u32, u32)> {
        self.pcs.get(pc as usize).copied()
    }

    pub fn block_head(&self, block_index: u32) -> u32 {
        self.block_head[block_index as usize]
    }

    pub fn block_of(&self, pc: u32) -> Option<u32> {
        self.locate(pc).map(|(b, _)| b)
    }
}

/// A labelled basic block.
#[derive(Debug, Clone)]
pub struct BlockIR {
    pub label: String,
    pub instrs: Vec<InstructionIR>,
}

/// One instruction: optional result register plus the operation.
#[derive(Debug, Clone, PartialEq)]
pub struct InstructionIR {
    pub result: Option<String>,
    pub op: Op,
}

/// A value reference: a local register, an integer literal, or a module-level
/// symbol (function, typeinfo or global).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Local(String),
    Imm(i64),
    Symbol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Eq,
    Lt,
}

impl BinKind {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Eq => "eq",
            BinKind::Lt => "lt",
        }
    }
}

/// Landing-pad clause. `Catch(None)` is the catch-all marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clause {
    Catch(Option<String>),
    Filter(Vec<String>),
    Cleanup,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Alloca {
        cells: u32,
    },
    Load {
        addr: Operand,
    },
    Store {
        value: Operand,
        addr: Operand,
    },
    Bin {
        kind: BinKind,
        lhs: Operand,
        rhs: Operand,
    },
    Br {
        target: String,
    },
    CondBr {
        cond: Operand,
        then_label: String,
        else_label: String,
    },
    Ret {
        value: Option<Operand>,
    },
    Call {
        callee: String,
        args: Vec<Operand>,
    },
    Invoke {
        callee: String,
        args: Vec<Operand>,
        normal: String,
        unwind: String,
    },
    Landingpad {
        clauses: Vec<Clause>,
    },
    Resume {
        value: Operand,
    },
    Phi {
        incomings: Vec<(Operand, String)>,
    },
    Const {
        value: Operand,
    },
    Gep {
        base: Operand,
        offset: i64,
    },
    Trap,
}

impl Op {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Op::Alloca { .. } => "alloca",
            Op::Load { .. } => "load",
            Op::Store { .. } => "store",
            Op::Bin { kind, .. } => kind.mnemonic(),
            Op::Br { .. } => "br",
            Op::CondBr { .. } => "condbr",
            Op::Ret { .. } => "ret",
            Op::Call { .. } => "call",
            Op::Invoke { .. } => "invoke",
            Op::Landingpad { .. } => "landingpad",
            Op::Resume { .. } => "resume",
            Op::Phi { .. } => "phi",
            Op::Const { .. } => "const",
            Op::Gep { .. } => "gep",
            Op::Trap => "trap",
        }
    }

    /// Terminators end a block; a call to a no-return runtime symbol also
    /// counts (see [`crate::machine::builtins::is_noreturn`]).
    pub fn is_plain_terminator(&self) -> bool {
        matches!(
            self,
            Op::Br { .. }
                | Op::CondBr { .. }
                | Op::Ret { .. }
                | Op::Invoke { .. }
                | Op::Resume { .. }
                | Op::Trap
        )
    }
}
