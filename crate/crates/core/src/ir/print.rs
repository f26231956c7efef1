use std::fmt::{self, Write};

use super::{Function, Instr, Operation, Program, Reg};

/// Canonical text: functions in name order, nodes in ascending id order.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    if p.main != "main" {
        writeln!(out, "main {}", p.main).unwrap();
        out.push('\n');
    }
    for (i, f) in p.functions.values().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write!(out, "{f}").unwrap();
    }
    out
}

fn join(regs: &[Reg]) -> String {
    regs.iter().map(Reg::name).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "function {}({}) stacksize {}",
            self.name,
            join(&self.params),
            self.stacksize
        )?;
        if self.code.keys().next() != Some(&self.entry) {
            write!(f, " entry {}", self.entry)?;
        }
        writeln!(f, " {{")?;
        let last = self.code.len().saturating_sub(1);
        for (i, (n, instr)) in self.code.iter().enumerate() {
            let sep = if i == last { "" } else { ";" };
            writeln!(f, "  {n}: {instr}{sep}")?;
        }
        writeln!(f, "}}")
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Op {
                op,
                args,
                dst,
                succ,
            } => match op {
                Operation::Const(k) => write!(f, "{dst} = const {k} goto {succ}"),
                Operation::CodeAddr(g, n) => write!(f, "{dst} = codeaddr {g}.{n} goto {succ}"),
                _ if args.is_empty() => write!(f, "{dst} = {} goto {succ}", op.mnemonic()),
                _ => write!(f, "{dst} = {} {} goto {succ}", op.mnemonic(), join(args)),
            },
            Instr::Load {
                addr,
                off,
                dst,
                succ,
            } => write!(f, "{dst} = load [{addr}, {off}] goto {succ}"),
            Instr::Store {
                addr,
                off,
                src,
                succ,
            } => write!(f, "store [{addr}, {off}], {src} goto {succ}"),
            Instr::Call {
                callee,
                args,
                dst,
                succ,
            } => write!(f, "{dst} = call {callee}({}) goto {succ}", join(args)),
            Instr::Tailcall { callee, args } => write!(f, "tailcall {callee}({})", join(args)),
            Instr::Cond {
                cond,
                args: [a, b],
                ifso,
                ifnot,
            } => write!(
                f,
                "if {} {a}, {b} then {ifso} else {ifnot}",
                cond.mnemonic()
            ),
            Instr::Jumptable { index, targets } => {
                let ts: Vec<String> = targets.iter().map(|t| t.to_string()).collect();
                write!(f, "jumptable {index} [{}]", ts.join(", "))
            }
            Instr::Return(None) => write!(f, "return"),
            Instr::Return(Some(r)) => write!(f, "return {r}"),
            Instr::RetVia { ra, value } | Instr::RetAa { ra, value } => {
                let kw = if matches!(self, Instr::RetVia { .. }) {
                    "retvia"
                } else {
                    "retaa"
                };
                match value {
                    Some(v) => write!(f, "{kw} {ra}, {v}"),
                    None => write!(f, "{kw} {ra}"),
                }
            }
            Instr::ExtCall {
                name,
                args,
                dst,
                succ,
            } => write!(f, "{dst} = extcall {name}({}) goto {succ}", join(args)),
        }
    }
}
