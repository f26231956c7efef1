use std::collections::BTreeMap;
use std::sync::Arc;

use crate::ir::{Function, Instr, Node, Operation, Reg};

/// Longest straight-line prefix included in the equivalence check.
const MAX_PREFIX: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Term {
    Init(Reg),
    Undef,
    Op(Operation, Vec<Arc<Term>>),
    /// Load from `addr + off` after the first `n` logged stores.
    Load(Arc<Term>, i64, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Exit {
    Return(Option<Arc<Term>>),
    Via(Arc<Term>, Option<Arc<Term>>),
}

#[derive(Default)]
struct SymState {
    regs: BTreeMap<Reg, Arc<Term>>,
    log: Vec<(Arc<Term>, i64, Arc<Term>)>,
}

impl SymState {
    fn get(&self, r: &Reg) -> Arc<Term> {
        self.regs
            .get(r)
            .cloned()
            .unwrap_or_else(|| Arc::new(Term::Init(r.clone())))
    }

    /// Register map with identity entries dropped.
    fn normalized(&self) -> BTreeMap<Reg, Arc<Term>> {
        self.regs
            .iter()
            .filter(|(r, t)| ***t != Term::Init((*r).clone()))
            .map(|(r, t)| (r.clone(), t.clone()))
            .collect()
    }
}

fn sp_term() -> Arc<Term> {
    Arc::new(Term::Op(Operation::GetSp, Vec::new()))
}

/// Symbolically executes a straight-line sequence ending in a return.
fn execute(seq: &[Instr]) -> Option<(SymState, Exit)> {
    let (last, body) = seq.split_last()?;
    let mut st = SymState::default();
    for i in body {
        match i {
            Instr::Op { op, args, dst, .. } => {
                let t = match op {
                    Operation::Move => st.get(&args[0]),
                    _ => Arc::new(Term::Op(
                        op.clone(),
                        args.iter().map(|a| st.get(a)).collect(),
                    )),
                };
                st.regs.insert(dst.clone(), t);
            }
            Instr::Load { addr, off, dst, .. } => {
                let t = Arc::new(Term::Load(st.get(addr), *off, st.log.len()));
                st.regs.insert(dst.clone(), t);
            }
            Instr::Store { addr, off, src, .. } => {
                let entry = (st.get(addr), *off, st.get(src));
                st.log.push(entry);
            }
            _ => return None,
        }
    }
    let exit = match last {
        Instr::Return(v) => Exit::Return(v.as_ref().map(|r| st.get(r))),
        Instr::RetVia { ra, value } | Instr::RetAa { ra, value } => {
            let mut target = st.get(ra);
            if matches!(last, Instr::RetAa { .. }) {
                target = Arc::new(Term::Op(Operation::PacDecode, vec![target, sp_term()]));
            }
            let v = value.as_ref().map(|r| st.get(r));
            st.regs.insert(ra.clone(), Arc::new(Term::Undef));
            Exit::Via(target, v)
        }
        _ => return None,
    };
    Some((st, exit))
}

/// True when both straight-line sequences end in the same register state,
/// store log and return target.
pub fn symexec_equiv(seq1: &[Instr], seq2: &[Instr]) -> bool {
    match (execute(seq1), execute(seq2)) {
        (Some((s1, e1)), Some((s2, e2))) => {
            e1 == e2 && s1.log == s2.log && s1.normalized() == s2.normalized()
        }
        _ => false,
    }
}

/// A fusable `rr = pac_decode rr, m; retvia rr, v` pair: decode node,
/// return node and the decoded register.
fn candidates(f: &Function) -> Vec<(Node, Node, Reg)> {
    let preds = f.predecessors();
    let mut out = Vec::new();
    for (&d, instr) in &f.code {
        let Instr::Op {
            op: Operation::PacDecode,
            args,
            dst,
            succ,
        } = instr
        else {
            continue;
        };
        let Some(Instr::RetVia { ra, value }) = f.code.get(succ) else {
            continue;
        };
        if ra != dst || args[0] != *dst || value.as_ref() == Some(dst) {
            continue;
        }
        if preds.get(succ).map_or(0, Vec::len) != 1 {
            continue;
        }
        let used_elsewhere = f
            .code
            .iter()
            .any(|(n, i)| *n != d && n != succ && i.uses().contains(&dst));
        if !used_elsewhere {
            out.push((d, *succ, dst.clone()));
        }
    }
    out
}

/// Straight-line chain of unique predecessors ending just before `n`.
fn prefix(f: &Function, n: Node) -> Vec<Instr> {
    let preds = f.predecessors();
    let mut chain = Vec::new();
    let mut cur = n;
    while chain.len() < MAX_PREFIX {
        let p = match preds.get(&cur).map(Vec::as_slice) {
            Some([p]) if *p != n && *p != cur => *p,
            _ => break,
        };
        let i = &f.code[&p];
        if !matches!(
            i,
            Instr::Op { .. } | Instr::Load { .. } | Instr::Store { .. }
        ) {
            break;
        }
        chain.push(i.clone());
        cur = p;
    }
    chain.reverse();
    chain
}

/// Fuses authenticate-then-return pairs into `retaa` when the symbolic
/// check agrees.
pub fn peephole_retaa(f: &Function) -> (Function, usize) {
    peephole_impl(f, false)
}

/// `skip_decode` fuses into a plain `retvia`, without the check.
pub(crate) fn peephole_impl(f: &Function, skip_decode: bool) -> (Function, usize) {
    let mut out = f.clone();
    let mut n = 0;
    for (d, r, reg) in candidates(f) {
        let Instr::RetVia { value, .. } = &f.code[&r] else {
            unreachable!()
        };
        let fused = if skip_decode {
            Instr::RetVia {
                ra: reg,
                value: value.clone(),
            }
        } else {
            let pre = prefix(f, d);
            let mut before = pre.clone();
            before.push(f.code[&d].clone());
            before.push(f.code[&r].clone());
            let fused = Instr::RetAa {
                ra: reg,
                value: value.clone(),
            };
            let mut after = pre;
            after.push(fused.clone());
            if !symexec_equiv(&before, &after) {
                continue;
            }
            fused
        };
        out.code.insert(d, fused);
        out.code.remove(&r);
        n += 1;
    }
    (out, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Node;

    fn r(s: &str) -> Reg {
        Reg::new(s)
    }

    fn op(op: Operation, args: &[&str], dst: &str) -> Instr {
        Instr::Op {
            op,
            args: args.iter().map(|a| r(a)).collect(),
            dst: r(dst),
            succ: Node(1),
        }
    }

    fn epilogue_prefix() -> Vec<Instr> {
        vec![
            op(Operation::GetSp, &[], "s"),
            Instr::Load {
                addr: r("s"),
                off: 8,
                dst: r("rr"),
                succ: Node(1),
            },
        ]
    }

    #[test]
    fn decode_then_retvia_matches_retaa() {
        let mut a = epilogue_prefix();
        a.push(op(Operation::PacDecode, &["rr", "s"], "rr"));
        a.push(Instr::RetVia {
            ra: r("rr"),
            value: Some(r("v")),
        });
        let mut b = epilogue_prefix();
        b.push(Instr::RetAa {
            ra: r("rr"),
            value: Some(r("v")),
        });
        assert!(symexec_equiv(&a, &b));
        assert!(symexec_equiv(&a, &a));
    }

    #[test]
    fn missing_decode_differs() {
        let a = [Instr::RetVia {
            ra: r("x"),
            value: None,
        }];
        let b = [Instr::RetAa {
            ra: r("x"),
            value: None,
        }];
        assert!(!symexec_equiv(&a, &b));
    }

    #[test]
    fn wrong_modifier_differs() {
        let mut a = epilogue_prefix();
        a.push(op(Operation::Const(0), &[], "m"));
        a.push(op(Operation::PacDecode, &["rr", "m"], "rr"));
        a.push(Instr::RetVia {
            ra: r("rr"),
            value: None,
        });
        let mut b = epilogue_prefix();
        b.push(op(Operation::Const(0), &[], "m"));
        b.push(Instr::RetAa {
            ra: r("rr"),
            value: None,
        });
        assert!(!symexec_equiv(&a, &b));
    }

    #[test]
    fn decode_into_other_register_differs() {
        let mut a = epilogue_prefix();
        a.push(op(Operation::PacDecode, &["rr", "s"], "dd"));
        a.push(Instr::RetVia {
            ra: r("dd"),
            value: None,
        });
        let mut b = epilogue_prefix();
        b.push(Instr::RetAa {
            ra: r("rr"),
            value: None,
        });
        assert!(!symexec_equiv(&a, &b));
    }

    #[test]
    fn non_straight_line_is_rejected() {
        let a = [Instr::Jumptable {
            index: r("i"),
            targets: vec![Node(1)],
        }];
        assert!(!symexec_equiv(&a, &a));
    }
}
