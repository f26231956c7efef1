//! RTL-style intermediate representation.
//!
//! Each function is a control-flow graph: a map from numbered nodes to
//! instructions, every instruction naming its successors explicitly. Node
//! ids are arbitrary positive integers, which lets passes insert code at
//! fresh ids without renumbering.

mod parse;
mod print;
mod wf;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

pub use parse::{parse_program, parse_program_with, ParseError, ParseOptions};
pub use print::print_program;
pub use wf::{check_wellformed, Diagnostic, Rule};

/// A pseudo-register. Infinitely many are available; two registers are
/// the same iff their names are equal.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(Arc<str>);

impl Reg {
    pub fn new(name: impl AsRef<str>) -> Reg {
        Reg(Arc::from(name.as_ref()))
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    /// Registers starting with `$` are reserved for pass-generated temporaries.
    pub fn is_reserved(&self) -> bool {
        self.0.starts_with('$')
    }
}

impl fmt::Debug for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A control-flow graph node id (always positive).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Node(pub u32);

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operation {
    Const(i64),
    Move,
    Add,
    Sub,
    Mul,
    /// Division that gets stuck on a zero (or undefined) divisor.
    DivStrict,
    /// Division that yields `Vundef` on a zero divisor.
    DivTotal,
    AddPtr,
    CmpEq,
    CmpLt,
    GetCanary,
    GetRa,
    GetSp,
    CodeAddr(String, Node),
    PacEncode,
    PacDecode,
}

impl Operation {
    pub fn arity(&self) -> usize {
        match self {
            Operation::Const(_)
            | Operation::GetCanary
            | Operation::GetRa
            | Operation::GetSp
            | Operation::CodeAddr(..) => 0,
            Operation::Move => 1,
            _ => 2,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Operation::Const(_) => "const",
            Operation::Move => "move",
            Operation::Add => "add",
            Operation::Sub => "sub",
            Operation::Mul => "mul",
            Operation::DivStrict => "div_strict",
            Operation::DivTotal => "div_total",
            Operation::AddPtr => "addptr",
            Operation::CmpEq => "cmp_eq",
            Operation::CmpLt => "cmp_lt",
            Operation::GetCanary => "getcanary",
            Operation::GetRa => "getra",
            Operation::GetSp => "getsp",
            Operation::CodeAddr(..) => "codeaddr",
            Operation::PacEncode => "pac_encode",
            Operation::PacDecode => "pac_decode",
        }
    }

    /// Opcodes that take no immediate, looked up by mnemonic.
    pub(crate) fn plain_from_mnemonic(s: &str) -> Option<Operation> {
        Some(match s {
            "move" => Operation::Move,
            "add" => Operation::Add,
            "sub" => Operation::Sub,
            "mul" => Operation::Mul,
            "div_strict" => Operation::DivStrict,
            "div_total" => Operation::DivTotal,
            "addptr" => Operation::AddPtr,
            "cmp_eq" => Operation::CmpEq,
            "cmp_lt" => Operation::CmpLt,
            "getcanary" => Operation::GetCanary,
            "getra" => Operation::GetRa,
            "getsp" => Operation::GetSp,
            "pac_encode" => Operation::PacEncode,
            "pac_decode" => Operation::PacDecode,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cond {
    Eq,
    Lt,
    Ge,
    Ne,
}

impl Cond {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Cond::Eq => "eq",
            Cond::Lt => "lt",
            Cond::Ge => "ge",
            Cond::Ne => "ne",
        }
    }
}

/// External functions known to every program.
pub const BUILTINS: &[&str] = &["print_int", "stack_chk_fail"];

pub fn builtin_arity(name: &str) -> Option<usize> {
    match name {
        "print_int" => Some(1),
        "stack_chk_fail" => Some(0),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instr {
    Op {
        op: Operation,
        args: Vec<Reg>,
        dst: Reg,
        succ: Node,
    },
    Load {
        addr: Reg,
        off: i64,
        dst: Reg,
        succ: Node,
    },
    Store {
        addr: Reg,
        off: i64,
        src: Reg,
        succ: Node,
    },
    Call {
        callee: String,
        args: Vec<Reg>,
        dst: Reg,
        succ: Node,
    },
    Tailcall {
        callee: String,
        args: Vec<Reg>,
    },
    Cond {
        cond: Cond,
        args: [Reg; 2],
        ifso: Node,
        ifnot: Node,
    },
    Jumptable {
        index: Reg,
        targets: Vec<Node>,
    },
    Return(Option<Reg>),
    /// Return through the code address held in `ra`, carrying `value`.
    RetVia {
        ra: Reg,
        value: Option<Reg>,
    },
    /// Authenticate `ra` against the stack pointer, then return through it.
    RetAa {
        ra: Reg,
        value: Option<Reg>,
    },
    ExtCall {
        name: String,
        args: Vec<Reg>,
        dst: Reg,
        succ: Node,
    },
}

impl Instr {
    pub fn successors(&self) -> Vec<Node> {
        match self {
            Instr::Op { succ, .. }
            | Instr::Load { succ, .. }
            | Instr::Store { succ, .. }
            | Instr::Call { succ, .. }
            | Instr::ExtCall { succ, .. } => vec![*succ],
            Instr::Cond { ifso, ifnot, .. } => vec![*ifso, *ifnot],
            Instr::Jumptable { targets, .. } => targets.clone(),
            Instr::Tailcall { .. }
            | Instr::Return(_)
            | Instr::RetVia { .. }
            | Instr::RetAa { .. } => Vec::new(),
        }
    }

    pub fn successors_mut(&mut self) -> Vec<&mut Node> {
        match self {
            Instr::Op { succ, .. }
            | Instr::Load { succ, .. }
            | Instr::Store { succ, .. }
            | Instr::Call { succ, .. }
            | Instr::ExtCall { succ, .. } => vec![succ],
            Instr::Cond { ifso, ifnot, .. } => vec![ifso, ifnot],
            Instr::Jumptable { targets, .. } => targets.iter_mut().collect(),
            Instr::Tailcall { .. }
            | Instr::Return(_)
            | Instr::RetVia { .. }
            | Instr::RetAa { .. } => Vec::new(),
        }
    }

    /// Registers read by this instruction.
    pub fn uses(&self) -> Vec<&Reg> {
        match self {
            Instr::Op { args, .. }
            | Instr::Call { args, .. }
            | Instr::Tailcall { args, .. }
            | Instr::ExtCall { args, .. } => args.iter().collect(),
            Instr::Load { addr, .. } => vec![addr],
            Instr::Store { addr, src, .. } => vec![addr, src],
            Instr::Cond { args, .. } => args.iter().collect(),
            Instr::Jumptable { index, .. } => vec![index],
            Instr::Return(r) => r.iter().collect(),
            Instr::RetVia { ra, value } | Instr::RetAa { ra, value } => {
                std::iter::once(ra).chain(value.iter()).collect()
            }
        }
    }

    /// Register written by this instruction, if any.
    pub fn def(&self) -> Option<&Reg> {
        match self {
            Instr::Op { dst, .. }
            | Instr::Load { dst, .. }
            | Instr::Call { dst, .. }
            | Instr::ExtCall { dst, .. } => Some(dst),
            _ => None,
        }
    }

    /// True for instructions that leave the current function.
    pub fn is_exit(&self) -> bool {
        matches!(
            self,
            Instr::Return(_) | Instr::Tailcall { .. } | Instr::RetVia { .. } | Instr::RetAa { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Reg>,
    pub stacksize: u64,
    pub entry: Node,
    pub code: BTreeMap<Node, Instr>,
}

impl Function {
    pub fn new(name: impl Into<String>, params: Vec<Reg>, stacksize: u64, entry: Node) -> Function {
        Function {
            name: name.into(),
            params,
            stacksize,
            entry,
            code: BTreeMap::new(),
        }
    }

    pub fn max_node(&self) -> u32 {
        self.code.keys().next_back().map_or(0, |n| n.0)
    }

    /// Every register mentioned anywhere in the function.
    pub fn registers(&self) -> BTreeSet<Reg> {
        let mut regs: BTreeSet<Reg> = self.params.iter().cloned().collect();
        for instr in self.code.values() {
            regs.extend(instr.uses().into_iter().cloned());
            regs.extend(instr.def().cloned());
        }
        regs
    }

    /// Map from node to the nodes that branch to it.
    pub fn predecessors(&self) -> BTreeMap<Node, Vec<Node>> {
        let mut preds: BTreeMap<Node, Vec<Node>> = BTreeMap::new();
        for (&n, instr) in &self.code {
            for s in instr.successors() {
                preds.entry(s).or_default().push(n);
            }
        }
        preds
    }

    pub fn calls_anything(&self) -> bool {
        self.code
            .values()
            .any(|i| matches!(i, Instr::Call { .. } | Instr::Tailcall { .. }))
    }
}

/// Hands out node ids above every id already used by a function.
#[derive(Debug)]
pub struct NodeAllocator {
    next: u32,
}

impl NodeAllocator {
    pub fn for_function(f: &Function) -> NodeAllocator {
        NodeAllocator {
            next: f.max_node() + 1,
        }
    }

    pub fn fresh(&mut self) -> Node {
        let n = Node(self.next);
        self.next += 1;
        n
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub functions: BTreeMap<String, Function>,
    pub main: String,
}

impl Program {
    pub fn new(main: impl Into<String>) -> Program {
        Program {
            functions: BTreeMap::new(),
            main: main.into(),
        }
    }

    pub fn add(&mut self, f: Function) {
        self.functions.insert(f.name.clone(), f);
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.get(name)
    }
}

pub(crate) fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub(crate) fn is_reserved_ident(s: &str) -> bool {
    s.len() > 1
        && s.starts_with('$')
        && s[1..]
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
}
