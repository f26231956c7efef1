use std::collections::BTreeSet;
use std::fmt;

use super::{builtin_arity, is_ident, is_reserved_ident, Instr, Node, Program, Reg};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rule {
    MissingMain,
    NameMismatch,
    InvalidName,
    DuplicateParam,
    MissingEntry,
    DanglingSuccessor,
    /// Stack size or memory offset not a multiple of 8.
    Alignment,
    EmptyJumptable,
    OpArity,
    UnresolvedCallee,
    UnknownBuiltin,
    BuiltinArity,
    InvalidNode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: Option<String>,
    pub node: Option<Node>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.rule)?;
        if let Some(func) = &self.function {
            write!(f, " in `{func}`")?;
        }
        if let Some(n) = self.node {
            write!(f, " at node {n}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

fn valid_reg(r: &Reg) -> bool {
    is_ident(r.name()) || is_reserved_ident(r.name())
}

/// Returns every violated structural invariant; empty means well-formed.
pub fn check_wellformed(p: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if !p.functions.contains_key(&p.main) {
        out.push(Diagnostic {
            function: None,
            node: None,
            rule: Rule::MissingMain,
            detail: format!("main function `{}` is not defined", p.main),
        });
    }
    for (key, f) in &p.functions {
        let mut diag = |node: Option<Node>, rule: Rule, detail: String| {
            out.push(Diagnostic {
                function: Some(f.name.clone()),
                node,
                rule,
                detail,
            })
        };
        if key != &f.name {
            diag(
                None,
                Rule::NameMismatch,
                format!("registered under `{key}`"),
            );
        }
        if !is_ident(&f.name) {
            diag(
                None,
                Rule::InvalidName,
                format!("`{}` is not a valid function name", f.name),
            );
        }
        let mut seen = BTreeSet::new();
        for r in &f.params {
            if !valid_reg(r) {
                diag(None, Rule::InvalidName, format!("invalid register `{r}`"));
            }
            if !seen.insert(r) {
                diag(
                    None,
                    Rule::DuplicateParam,
                    format!("parameter `{r}` repeated"),
                );
            }
        }
        if f.stacksize % 8 != 0 {
            diag(
                None,
                Rule::Alignment,
                format!("stacksize {} is not a multiple of 8", f.stacksize),
            );
        }
        if !f.code.contains_key(&f.entry) {
            diag(
                None,
                Rule::MissingEntry,
                format!("entry node {} does not exist", f.entry),
            );
        }
        for (&n, instr) in &f.code {
            if n.0 == 0 {
                diag(
                    Some(n),
                    Rule::InvalidNode,
                    "node ids must be positive".into(),
                );
            }
            for s in instr.successors() {
                if !f.code.contains_key(&s) {
                    diag(
                        Some(n),
                        Rule::DanglingSuccessor,
                        format!("successor {s} does not exist"),
                    );
                }
            }
            for r in instr.uses().into_iter().chain(instr.def()) {
                if !valid_reg(r) {
                    diag(
                        Some(n),
                        Rule::InvalidName,
                        format!("invalid register `{r}`"),
                    );
                }
            }
            match instr {
                Instr::Op { op, args, .. } if op.arity() != args.len() => diag(
                    Some(n),
                    Rule::OpArity,
                    format!(
                        "`{}` takes {} argument(s), got {}",
                        op.mnemonic(),
                        op.arity(),
                        args.len()
                    ),
                ),
                Instr::Load { off, .. } | Instr::Store { off, .. } if off % 8 != 0 => diag(
                    Some(n),
                    Rule::Alignment,
                    format!("offset {off} is not a multiple of 8"),
                ),
                Instr::Jumptable { targets, .. } if targets.is_empty() => diag(
                    Some(n),
                    Rule::EmptyJumptable,
                    "jump table has no targets".into(),
                ),
                Instr::Call { callee, args, .. } | Instr::Tailcall { callee, args } => {
                    if !p.functions.contains_key(callee) {
                        match builtin_arity(callee) {
                            None => diag(
                                Some(n),
                                Rule::UnresolvedCallee,
                                format!("`{callee}` is neither a function nor a builtin"),
                            ),
                            Some(k) if k != args.len() => diag(
                                Some(n),
                                Rule::BuiltinArity,
                                format!("builtin `{callee}` takes {k} argument(s)"),
                            ),
                            _ => {}
                        }
                    }
                }
                Instr::ExtCall { name, args, .. } => match builtin_arity(name) {
                    None => diag(
                        Some(n),
                        Rule::UnknownBuiltin,
                        format!("unknown builtin `{name}`"),
                    ),
                    Some(k) if k != args.len() => diag(
                        Some(n),
                        Rule::BuiltinArity,
                        format!("builtin `{name}` takes {k} argument(s)"),
                    ),
                    _ => {}
                },
                _ => {}
            }
        }
    }
    out
}
