//! Hand-rolled recursive-descent parser for the EHIR textual format.
//!
//! The grammar is documented in `docs/ehir-grammar.md`. Comments run from `;`
//! to end of line. `@name` is a module-level symbol, `%name` a local register
//! or block label, bare `name:` introduces a block.

use super::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub msg: String,
}

pub fn parse_module(text: &str) -> Result<ModuleIR, ParseError> {
    Parser::new(text).module()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Global(String),   // @name
    Local(String),    // %name
    Word(String),     // bare identifier / keyword
    Int(i64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Colon,
    Comma,
    Assign,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Global(s) | Tok::Local(s) | Tok::Word(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
    // current token and its position
    tok: Tok,
    tok_line: u32,
    tok_col: u32,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
            tok: Tok::Eof,
            tok_line: 1,
            tok_col: 1,
        };
        // Prime the first token; lexical errors surface on first use.
        if let Err(e) = p.bump() {
            p.tok = Tok::Word(format!("\u{0}lex-error:{}", e.msg));
            p.tok_line = e.line;
            p.tok_col = e.col;
        }
        p
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line: self.tok_line,
            col: self.tok_col,
            msg: msg.into(),
        })
    }

    fn err_at<T>(&self, line: u32, col: u32, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn advance_char(&mut self) {
        if self.src[self.pos] == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        self.pos += 1;
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c == b';' {
                while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                    self.advance_char();
                }
            } else if c.is_ascii_whitespace() {
                self.advance_char();
            } else {
                break;
            }
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' {
                self.advance_char();
            } else {
                break;
            }
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    /// Read the next token into `self.tok`.
    fn bump(&mut self) -> Result<Tok, ParseError> {
        let prev = std::mem::replace(&mut self.tok, Tok::Eof);
        self.skip_ws();
        self.tok_line = self.line;
        self.tok_col = self.col;
        if self.pos >= self.src.len() {
            self.tok = Tok::Eof;
            return Ok(prev);
        }
        let c = self.src[self.pos];
        self.tok = match c {
            b'@' => {
                self.advance_char();
                let name = self.ident();
                if name.is_empty() {
                    return self.err("expected name after `@`");
                }
                Tok::Global(format!("@{name}"))
            }
            b'%' => {
                self.advance_char();
                let name = self.ident();
                if name.is_empty() {
                    return self.err("expected name after `%`");
                }
                Tok::Local(name)
            }
            b'(' => {
                self.advance_char();
                Tok::LParen
            }
            b')' => {
                self.advance_char();
                Tok::RParen
            }
            b'{' => {
                self.advance_char();
                Tok::LBrace
            }
            b'}' => {
                self.advance_char();
                Tok::RBrace
            }
            b'[' => {
                self.advance_char();
                Tok::LBracket
            }
            b']' => {
                self.advance_char();
                Tok::RBracket
            }
            b':' => {
                self.advance_char();
                Tok::Colon
            }
            b',' => {
                self.advance_char();
                Tok::Comma
            }
            b'=' => {
                self.advance_char();
                Tok::Assign
            }
            b'-' | b'0'..=b'9' => {
                let start = self.pos;
                if c == b'-' {
                    self.advance_char();
                }
                let digits_start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.advance_char();
                }
                if self.pos == digits_start {
                    return self.err("expected digits");
                }
                let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                match s.parse::<i64>() {
                    Ok(v) => Tok::Int(v),
                    Err(_) => return self.err(format!("integer out of range: {s}")),
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => Tok::Word(self.ident()),
            other => {
                return self.err(format!("unexpected character `{}`", other as char));
            }
        };
        Ok(prev)
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if self.tok == want {
            self.bump()?;
            Ok(())
        } else {
            self.err(format!(
                "expected {}, found {}",
                want.describe(),
                self.tok.describe()
            ))
        }
    }

    fn expect_word(&mut self, word: &str) -> Result<(), ParseError> {
        match &self.tok {
            Tok::Word(w) if w == word => {
                self.bump()?;
                Ok(())
            }
            other => self.err(format!("expected `{word}`, found {}", other.describe())),
        }
    }

    fn global_name(&mut self) -> Result<String, ParseError> {
        match self.tok.clone() {
            Tok::Global(name) => {
                self.bump()?;
                Ok(name)
            }
            other => self.err(format!("expected `@name`, found {}", other.describe())),
        }
    }

    fn local_name(&mut self) -> Result<String, ParseError> {
        match self.tok.clone() {
            Tok::Local(name) => {
                self.bump()?;
                Ok(name)
            }
            other => self.err(format!("expected `%name`, found {}", other.describe())),
        }
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        match self.tok.clone() {
            Tok::Local(name) => {
                self.bump()?;
                Ok(Operand::Local(name))
            }
            Tok::Global(name) => {
                self.bump()?;
                Ok(Operand::Symbol(name))
            }
            Tok::Int(v) => {
                self.bump()?;
                Ok(Operand::Imm(v))
            }
            other => self.err(format!("expected an operand, found {}", other.describe())),
        }
    }

    fn module(&mut self) -> Result<ModuleIR, ParseError> {
        let mut m = ModuleIR::default();
        loop {
            match self.tok.clone() {
                Tok::Eof => break,
                Tok::Word(w) if w == "typeinfo" => {
                    let (line, col) = (self.tok_line, self.tok_col);
                    self.bump()?;
                    let name = self.global_name()?;
                    let mut bases = Vec::new();
                    if self.tok == Tok::Colon {
                        self.bump()?;
                        bases.push(self.global_name()?);
                        while self.tok == Tok::Comma {
                            self.bump()?;
                            bases.push(self.global_name()?);
                        }
                    }
                    if m.typeinfos.insert(&name, bases).is_none() {
                        return self.err_at(line, col, format!("duplicate definition of {name}"));
                    }
                }
                Tok::Word(w) if w == "global" => {
                    self.bump()?;
                    let name = self.global_name()?;
                    self.expect(Tok::Assign)?;
                    self.expect(Tok::LBracket)?;
                    let mut bytes = Vec::new();
                    while self.tok != Tok::RBracket {
                        if !bytes.is_empty() {
                            self.expect(Tok::Comma)?;
                        }
                        match self.tok {
                            Tok::Int(v) if (0..=255).contains(&v) => {
                                bytes.push(v as u8);
                                self.bump()?;
                            }
                            _ => return self.err("expected a byte value in 0..=255"),
                        }
                    }
                    self.expect(Tok::RBracket)?;
                    m.globals.push(GlobalIR { name, bytes });
                }
                Tok::Word(w) if w == "fn" => {
                    let f = self.function()?;
                    m.functions.push(f);
                }
                other => {
                    return self.err(format!(
                        "expected `typeinfo`, `global` or `fn`, found {}",
                        other.describe()
                    ))
                }
            }
        }
        Ok(m)
    }

    fn function(&mut self) -> Result<FunctionIR, ParseError> {
        self.expect_word("fn")?;
        let name = self.global_name()?;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        while self.tok != Tok::RParen {
            if !params.is_empty() {
                self.expect(Tok::Comma)?;
            }
            params.push(self.local_name()?);
        }
        self.expect(Tok::RParen)?;

        let mut nounwind = false;
        let mut personality = None;
        let mut lsda_ref = None;
        loop {
            match self.tok.clone() {
                Tok::Word(w) if w == "nounwind" => {
                    self.bump()?;
                    nounwind = true;
                }
                Tok::Word(w) if w == "personality" => {
                    self.bump()?;
                    personality = Some(self.global_name()?);
                }
                Tok::Word(w) if w == "lsda" => {
                    self.bump()?;
                    lsda_ref = Some(self.global_name()?);
                }
                _ => break,
            }
        }

        self.expect(Tok::LBrace)?;
        let mut blocks = Vec::new();
        while self.tok != Tok::RBrace {
            blocks.push(self.block()?);
        }
        self.expect(Tok::RBrace)?;
        if blocks.is_empty() {
            return self.err(format!("function {name} has no blocks"));
        }
        Ok(FunctionIR {
            name,
            params,
            nounwind,
            personality,
            lsda_ref,
            blocks,
        })
    }

    /// Is the current token a bare word directly followed by `:`? Used to
    /// tell the next block's label from a misspelled opcode.
    fn at_block_label(&mut self) -> Result<bool, ParseError> {
        if !matches!(self.tok, Tok::Word(_)) {
            return Ok(false);
        }
        let save = (
            self.pos,
            self.line,
            self.col,
            self.tok.clone(),
            self.tok_line,
            self.tok_col,
        );
        self.bump()?;
        let is_label = self.tok == Tok::Colon;
        (self.pos, self.line, self.col, self.tok, self.tok_line, self.tok_col) = save;
        Ok(is_label)
    }

    fn block(&mut self) -> Result<BlockIR, ParseError> {
        let label = match self.tok.clone() {
            Tok::Word(w) => {
                self.bump()?;
                w
            }
            other => {
                return self.err(format!("expected a block label, found {}", other.describe()))
            }
        };
        self.expect(Tok::Colon)?;
        let mut instrs = Vec::new();
        loop {
            match self.tok.clone() {
                Tok::RBrace => break,
                Tok::Word(w) if !is_opcode(&w) => {
                    if self.at_block_label()? {
                        break;
                    }
                    return self.err(format!("unknown opcode `{w}`"));
                }
                _ => instrs.push(self.instruction()?),
            }
        }
        Ok(BlockIR { label, instrs })
    }

    fn instruction(&mut self) -> Result<InstructionIR, ParseError> {
        let result = match self.tok.clone() {
            Tok::Local(name) => {
                self.bump()?;
                self.expect(Tok::Assign)?;
                Some(name)
            }
            _ => None,
        };
        let word = match self.tok.clone() {
            Tok::Word(w) => w,
            other => return self.err(format!("expected an opcode, found {}", other.describe())),
        };
        if !is_opcode(&word) {
            return self.err(format!("unknown opcode `{word}`"));
        }
        self.bump()?;
        let op = match word.as_str() {
            "alloca" => match self.tok {
                Tok::Int(v) if v > 0 => {
                    self.bump()?;
                    Op::Alloca { cells: v as u32 }
                }
                _ => return self.err("alloca takes a positive cell count"),
            },
            "load" => Op::Load {
                addr: self.operand()?,
            },
            "store" => {
                let value = self.operand()?;
                self.expect(Tok::Comma)?;
                let addr = self.operand()?;
                Op::Store { value, addr }
            }
            "add" | "sub" | "eq" | "lt" => {
                let kind = match word.as_str() {
                    "add" => BinKind::Add,
                    "sub" => BinKind::Sub,
                    "eq" => BinKind::Eq,
                    _ => BinKind::Lt,
                };
                let lhs = self.operand()?;
                self.expect(Tok::Comma)?;
                let rhs = self.operand()?;
                Op::Bin { kind, lhs, rhs }
            }
            "br" => Op::Br {
                target: self.local_name()?,
            },
            "condbr" => {
                let cond = self.operand()?;
                self.expect(Tok::Comma)?;
                let then_label = self.local_name()?;
                self.expect(Tok::Comma)?;
                let else_label = self.local_name()?;
                Op::CondBr {
                    cond,
                    then_label,
                    else_label,
                }
            }
            "ret" => {
                let value = match &self.tok {
                    Tok::Local(_) | Tok::Global(_) | Tok::Int(_) => Some(self.operand()?),
                    _ => None,
                };
                Op::Ret { value }
            }
            "call" => {
                let (callee, args) = self.call_tail()?;
                Op::Call { callee, args }
            }
            "invoke" => {
                let (callee, args) = self.call_tail()?;
                self.expect_word("to")?;
                let normal = self.local_name()?;
                self.expect_word("unwind")?;
                let unwind = self.local_name()?;
                Op::Invoke {
                    callee,
                    args,
                    normal,
                    unwind,
                }
            }
            "landingpad" => {
                let mut clauses = Vec::new();
                loop {
                    match self.tok.clone() {
                        Tok::Word(w) if w == "catch" => {
                            self.bump()?;
                            match self.tok.clone() {
                                Tok::Word(w) if w == "any" => {
                                    self.bump()?;
                                    clauses.push(Clause::Catch(None));
                                }
                                Tok::Global(_) => {
                                    clauses.push(Clause::Catch(Some(self.global_name()?)));
                                }
                                other => {
                                    return self.err(format!(
                                        "expected `@typeinfo` or `any`, found {}",
                                        other.describe()
                                    ))
                                }
                            }
                        }
                        Tok::Word(w) if w == "filter" => {
                            self.bump()?;
                            self.expect(Tok::LBracket)?;
                            let mut types = Vec::new();
                            while self.tok != Tok::RBracket {
                                if !types.is_empty() {
                                    self.expect(Tok::Comma)?;
                                }
                                types.push(self.global_name()?);
                            }
                            self.expect(Tok::RBracket)?;
                            clauses.push(Clause::Filter(types));
                        }
                        Tok::Word(w) if w == "cleanup" => {
                            self.bump()?;
                            clauses.push(Clause::Cleanup);
                        }
                        _ => break,
                    }
                }
                if clauses.is_empty() {
                    return self.err("landingpad requires at least one clause");
                }
                Op::Landingpad { clauses }
            }
            "resume" => Op::Resume {
                value: self.operand()?,
            },
            "phi" => {
                let mut incomings = Vec::new();
                loop {
                    if !incomings.is_empty() {
                        if self.tok != Tok::Comma {
                            break;
                        }
                        self.bump()?;
                    }
                    self.expect(Tok::LBracket)?;
                    let v = self.operand()?;
                    self.expect(Tok::Comma)?;
                    let label = self.local_name()?;
                    self.expect(Tok::RBracket)?;
                    incomings.push((v, label));
                }
                if incomings.is_empty() {
                    return self.err("phi requires at least one incoming");
                }
                Op::Phi { incomings }
            }
            "const" => Op::Const {
                value: self.operand()?,
            },
            "gep" => {
                let base = self.operand()?;
                self.expect(Tok::Comma)?;
                match self.tok {
                    Tok::Int(v) => {
                        self.bump()?;
                        Op::Gep { base, offset: v }
                    }
                    _ => return self.err("gep takes a literal field offset"),
                }
            }
            "trap" => Op::Trap,
            _ => unreachable!("is_opcode covers all cases"),
        };
        Ok(InstructionIR { result, op })
    }

    fn call_tail(&mut self) -> Result<(String, Vec<Operand>), ParseError> {
        let callee = self.global_name()?;
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        while self.tok != Tok::RParen {
            if !args.is_empty() {
                self.expect(Tok::Comma)?;
            }
            args.push(self.operand()?);
        }
        self.expect(Tok::RParen)?;
        Ok((callee, args))
    }
}

fn is_opcode(w: &str) -> bool {
    matches!(
        w,
        "alloca"
            | "load"
            | "store"
            | "add"
            | "sub"
            | "eq"
            | "lt"
            | "br"
            | "condbr"
            | "ret"
            | "call"
            | "invoke"
            | "landingpad"
            | "resume"
            | "phi"
            | "const"
            | "gep"
            | "trap"
    )
}
