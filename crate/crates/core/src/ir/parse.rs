//! Textual IR reader.
//!
//! ```text
//! main fac                      # optional, defaults to `main`
//! function fac(x) stacksize 0 { # `entry N` may follow the stacksize
//!   1: one = const 1 goto 2;
//!   2: r = call fac_rec(x, one) goto 3;
//!   3: return r
//! }
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use super::{
    check_wellformed, is_ident, is_reserved_ident, Cond, Diagnostic, Function, Instr, Node,
    Operation, Program, Reg,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("{line}:{col}: unknown opcode `{opcode}`")]
    UnknownOpcode {
        line: usize,
        col: usize,
        opcode: String,
    },
    #[error("{line}:{col}: duplicate node {node} in function `{function}`")]
    DuplicateNode {
        line: usize,
        col: usize,
        function: String,
        node: u32,
    },
    #[error("{line}:{col}: duplicate function `{function}`")]
    DuplicateFunction {
        line: usize,
        col: usize,
        function: String,
    },
    #[error("program is not well-formed: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Malformed(Vec<Diagnostic>),
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Accept `$`-prefixed registers, which only passes may introduce.
    pub allow_reserved: bool,
    /// Run [`check_wellformed`] on the result.
    pub check_wellformed: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            allow_reserved: false,
            check_wellformed: true,
        }
    }
}

impl ParseOptions {
    /// Options for reading back the output of the pass pipeline.
    pub fn transformed() -> ParseOptions {
        ParseOptions {
            allow_reserved: true,
            check_wellformed: true,
        }
    }
}

/// Parses a source file: reserved registers are rejected and the result is
/// checked for well-formedness.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    parse_program_with(text, ParseOptions::default())
}

pub fn parse_program_with(text: &str, opts: ParseOptions) -> Result<Program, ParseError> {
    let tokens = lex(text, opts.allow_reserved)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: end_position(text),
    };
    let program = parser.program()?;
    if opts.check_wellformed {
        let diags = check_wellformed(&program);
        if !diags.is_empty() {
            return Err(ParseError::Malformed(diags));
        }
    }
    Ok(program)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn end_position(text: &str) -> (usize, usize) {
    let line = text.lines().count().max(1);
    let col = text.lines().last().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn lex(text: &str, allow_reserved: bool) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let (line, col) = (lineno + 1, i + 1);
            let err = |msg: String| ParseError::Syntax { line, col, msg };
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' || c == '$' {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if c == '$' {
                    if !is_reserved_ident(&word) {
                        return Err(err(format!("invalid identifier `{word}`")));
                    }
                    if !allow_reserved {
                        return Err(err(format!(
                            "register `{word}` uses the `$` prefix reserved for compiler temporaries"
                        )));
                    }
                }
                out.push(Token {
                    tok: Tok::Ident(word),
                    line,
                    col,
                });
                continue;
            }
            if c.is_ascii_digit()
                || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
            {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let lit: String = chars[start..i].iter().collect();
                let value = lit
                    .parse::<i64>()
                    .map_err(|_| err(format!("integer literal `{lit}` out of range")))?;
                out.push(Token {
                    tok: Tok::Int(value),
                    line,
                    col,
                });
                continue;
            }
            if "(){}[],;:=.".contains(c) {
                out.push(Token {
                    tok: Tok::Punct(c),
                    line,
                    col,
                });
                i += 1;
                continue;
            }
            return Err(err(format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + k).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.tokens
            .get(self.pos)
            .map_or(self.end, |t| (t.line, t.col))
    }

    fn error<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError::Syntax {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of input".to_string(),
            Some(Tok::Ident(s)) => format!("`{s}`"),
            Some(Tok::Int(i)) => format!("`{i}`"),
            Some(Tok::Punct(c)) => format!("`{c}`"),
        }
    }

    fn punct(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected `{c}`, found {}", self.describe()))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected `{kw}`, found {}", self.describe()))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.error(format!("expected identifier, found {}", self.describe())),
        }
    }

    /// Function and builtin names never carry the reserved prefix.
    fn name(&mut self) -> Result<String, ParseError> {
        let s = self.ident()?;
        if !is_ident(&s) {
            self.pos -= 1;
            return self.error(format!("invalid name `{s}`"));
        }
        Ok(s)
    }

    fn reg(&mut self) -> Result<Reg, ParseError> {
        Ok(Reg::new(self.ident()?))
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.peek() {
            Some(Tok::Int(i)) => {
                let i = *i;
                self.pos += 1;
                Ok(i)
            }
            _ => self.error(format!("expected integer, found {}", self.describe())),
        }
    }

    fn node(&mut self) -> Result<Node, ParseError> {
        let i = self.int()?;
        if i <= 0 || i > u32::MAX as i64 {
            self.pos -= 1;
            return self.error(format!("node id {i} is not a positive 32-bit integer"));
        }
        Ok(Node(i as u32))
    }

    fn reg_list(&mut self, close: char) -> Result<Vec<Reg>, ParseError> {
        let mut regs = Vec::new();
        if self.eat_punct(close) {
            return Ok(regs);
        }
        loop {
            regs.push(self.reg()?);
            if self.eat_punct(close) {
                return Ok(regs);
            }
            self.punct(',')?;
        }
    }

    fn goto(&mut self) -> Result<Node, ParseError> {
        self.keyword("goto")?;
        self.node()
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut main = None;
        let mut functions = BTreeMap::new();
        while self.peek().is_some() {
            if self.is_keyword("main") {
                self.pos += 1;
                if main.is_some() {
                    return self.error("`main` declared twice");
                }
                main = Some(self.name()?);
                self.eat_punct(';');
            } else if self.is_keyword("function") {
                let (line, col) = self.here();
                let f = self.function()?;
                if functions.contains_key(&f.name) {
                    return Err(ParseError::DuplicateFunction {
                        line,
                        col,
                        function: f.name,
                    });
                }
                functions.insert(f.name.clone(), f);
            } else {
                return self.error(format!(
                    "expected `function` or `main`, found {}",
                    self.describe()
                ));
            }
        }
        Ok(Program {
            functions,
            main: main.unwrap_or_else(|| "main".to_string()),
        })
    }

    fn function(&mut self) -> Result<Function, ParseError> {
        self.keyword("function")?;
        let name = self.name()?;
        self.punct('(')?;
        let params = self.reg_list(')')?;
        self.keyword("stacksize")?;
        let stacksize = self.int()?;
        if stacksize < 0 {
            self.pos -= 1;
            return self.error("stacksize must be non-negative");
        }
        let entry = if self.is_keyword("entry") {
            self.pos += 1;
            Some(self.node()?)
        } else {
            None
        };
        self.punct('{')?;
        let mut code = BTreeMap::new();
        while !self.eat_punct('}') {
            if self.eat_punct(';') {
                continue;
            }
            let (line, col) = self.here();
            let node = self.node()?;
            self.punct(':')?;
            let instr = self.instr()?;
            if code.insert(node, instr).is_some() {
                return Err(ParseError::DuplicateNode {
                    line,
                    col,
                    function: name,
                    node: node.0,
                });
            }
        }
        let entry = match entry.or_else(|| code.keys().next().copied()) {
            Some(e) => e,
            None => return self.error(format!("function `{name}` has no instructions")),
        };
        Ok(Function {
            name,
            params,
            stacksize: stacksize as u64,
            entry,
            code,
        })
    }

    fn instr(&mut self) -> Result<Instr, ParseError> {
        let Some(Tok::Ident(head)) = self.peek().cloned() else {
            return self.error(format!("expected instruction, found {}", self.describe()));
        };
        // `dst = ...` forms
        if self.peek_at(1) == Some(&Tok::Punct('=')) {
            let dst = self.reg()?;
            self.punct('=')?;
            return self.assignment(dst);
        }
        self.pos += 1;
        match head.as_str() {
            "store" => {
                let (addr, off) = self.address()?;
                self.punct(',')?;
                let src = self.reg()?;
                let succ = self.goto()?;
                Ok(Instr::Store {
                    addr,
                    off,
                    src,
                    succ,
                })
            }
            "tailcall" => {
                let callee = self.name()?;
                self.punct('(')?;
                let args = self.reg_list(')')?;
                Ok(Instr::Tailcall { callee, args })
            }
            "if" => {
                let cond = match self.ident()?.as_str() {
                    "eq" => Cond::Eq,
                    "lt" => Cond::Lt,
                    "ge" => Cond::Ge,
                    "ne" => Cond::Ne,
                    other => {
                        self.pos -= 1;
                        return self.error(format!("unknown condition `{other}`"));
                    }
                };
                let a = self.reg()?;
                self.punct(',')?;
                let b = self.reg()?;
                self.keyword("then")?;
                let ifso = self.node()?;
                self.keyword("else")?;
                let ifnot = self.node()?;
                Ok(Instr::Cond {
                    cond,
                    args: [a, b],
                    ifso,
                    ifnot,
                })
            }
            "jumptable" => {
                let index = self.reg()?;
                self.punct('[')?;
                let mut targets = vec![self.node()?];
                while self.eat_punct(',') {
                    targets.push(self.node()?);
                }
                self.punct(']')?;
                Ok(Instr::Jumptable { index, targets })
            }
            "return" => {
                let value = if matches!(self.peek(), Some(Tok::Ident(_))) {
                    Some(self.reg()?)
                } else {
                    None
                };
                Ok(Instr::Return(value))
            }
            "retvia" | "retaa" => {
                let ra = self.reg()?;
                let value = if self.eat_punct(',') {
                    Some(self.reg()?)
                } else {
                    None
                };
                Ok(if head == "retvia" {
                    Instr::RetVia { ra, value }
                } else {
                    Instr::RetAa { ra, value }
                })
            }
            _ => {
                self.pos -= 1;
                self.error(format!("unknown instruction `{head}`"))
            }
        }
    }

    fn address(&mut self) -> Result<(Reg, i64), ParseError> {
        self.punct('[')?;
        let addr = self.reg()?;
        self.punct(',')?;
        let off = self.int()?;
        self.punct(']')?;
        Ok((addr, off))
    }

    fn assignment(&mut self, dst: Reg) -> Result<Instr, ParseError> {
        let (line, col) = self.here();
        let head = self.ident()?;
        match head.as_str() {
            "load" => {
                let (addr, off) = self.address()?;
                let succ = self.goto()?;
                Ok(Instr::Load {
                    addr,
                    off,
                    dst,
                    succ,
                })
            }
            "call" | "extcall" => {
                let callee = self.name()?;
                self.punct('(')?;
                let args = self.reg_list(')')?;
                let succ = self.goto()?;
                Ok(if head == "call" {
                    Instr::Call {
                        callee,
                        args,
                        dst,
                        succ,
                    }
                } else {
                    Instr::ExtCall {
                        name: callee,
                        args,
                        dst,
                        succ,
                    }
                })
            }
            "const" => {
                let k = self.int()?;
                let succ = self.goto()?;
                Ok(Instr::Op {
                    op: Operation::Const(k),
                    args: Vec::new(),
                    dst,
                    succ,
                })
            }
            "codeaddr" => {
                let f = self.name()?;
                self.punct('.')?;
                let n = self.node()?;
                let succ = self.goto()?;
                Ok(Instr::Op {
                    op: Operation::CodeAddr(f, n),
                    args: Vec::new(),
                    dst,
                    succ,
                })
            }
            other => {
                let Some(op) = Operation::plain_from_mnemonic(other) else {
                    return Err(ParseError::UnknownOpcode {
                        line,
                        col,
                        opcode: other.to_string(),
                    });
                };
                let mut args = Vec::new();
                if !self.is_keyword("goto") {
                    args.push(self.reg()?);
                    while self.eat_punct(',') {
                        args.push(self.reg()?);
                    }
                }
                let succ = self.goto()?;
                Ok(Instr::Op {
                    op,
                    args,
                    dst,
                    succ,
                })
            }
        }
    }
}
