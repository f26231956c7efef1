use crate::ir::{Cond, Function, Instr, Node, NodeAllocator, Operation, Program};
use crate::relations::{align8, CanaryEntry, CanarySpec};

use super::{Counts, Fresh, PassConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum CanaryBug {
    WrongOffset,
    SkipEpilogue,
}

/// Stores the canary word just above each protected frame on entry and
/// checks it before every exit. Counts are the number of checked exits.
pub fn pass_canary(p: &Program, cfg: &PassConfig) -> (Program, CanarySpec, Counts) {
    canary_impl(p, cfg, None)
}

pub(crate) fn canary_impl(
    p: &Program,
    cfg: &PassConfig,
    bug: Option<CanaryBug>,
) -> (Program, CanarySpec, Counts) {
    let mut out = Program::new(p.main.clone());
    let mut spec = CanarySpec::default();
    let mut counts = Vec::new();
    for f in p.functions.values() {
        let protected = cfg.fstack_protector_all || f.stacksize > 0;
        if !protected {
            spec.functions.insert(
                f.name.clone(),
                CanaryEntry {
                    protected,
                    canary_offset: 0,
                    new_stacksize: f.stacksize,
                },
            );
            out.add(f.clone());
            continue;
        }
        let mut offset = align8(f.stacksize);
        let new_stacksize = offset + 8;
        if bug == Some(CanaryBug::WrongOffset) && offset >= 8 {
            offset -= 8;
        }
        let (g, n) = protect(f, offset, new_stacksize, bug);
        spec.functions.insert(
            f.name.clone(),
            CanaryEntry {
                protected,
                canary_offset: offset,
                new_stacksize,
            },
        );
        counts.push((f.name.clone(), n));
        out.add(g);
    }
    (out, spec, counts)
}

fn protect(
    f: &Function,
    offset: u64,
    new_stacksize: u64,
    bug: Option<CanaryBug>,
) -> (Function, usize) {
    let mut out = f.clone();
    out.stacksize = new_stacksize;
    let mut nodes = NodeAllocator::for_function(f);
    let mut fresh = Fresh::new(f);
    let off = offset as i64;

    // Prologue: store the canary at sp + offset, then fall into the old entry.
    let (c, s, o, a) = (
        fresh.reg("c"),
        fresh.reg("cs"),
        fresh.reg("co"),
        fresh.reg("ca"),
    );
    let pro: Vec<Node> = (0..5).map(|_| nodes.fresh()).collect();
    let op = |op, args: Vec<_>, dst: &crate::ir::Reg, succ| Instr::Op {
        op,
        args,
        dst: dst.clone(),
        succ,
    };
    out.code
        .insert(pro[0], op(Operation::GetCanary, vec![], &c, pro[1]));
    out.code
        .insert(pro[1], op(Operation::GetSp, vec![], &s, pro[2]));
    out.code
        .insert(pro[2], op(Operation::Const(off), vec![], &o, pro[3]));
    out.code.insert(
        pro[3],
        op(Operation::AddPtr, vec![s.clone(), o.clone()], &a, pro[4]),
    );
    out.code.insert(
        pro[4],
        Instr::Store {
            addr: a,
            off: 0,
            src: c,
            succ: f.entry,
        },
    );
    out.entry = pro[0];

    if bug == Some(CanaryBug::SkipEpilogue) {
        return (out, 0);
    }

    // Epilogue: reload and compare before each exit, which moves to a
    // fresh node.
    let exits: Vec<Node> = f
        .code
        .iter()
        .filter(|(_, i)| i.is_exit())
        .map(|(&n, _)| n)
        .collect();
    let (k, ks, ko, ka, kv, kx) = (
        fresh.reg("k"),
        fresh.reg("ks"),
        fresh.reg("ko"),
        fresh.reg("ka"),
        fresh.reg("kv"),
        fresh.reg("kx"),
    );
    let fail = nodes.fresh();
    out.code.insert(
        fail,
        Instr::ExtCall {
            name: "stack_chk_fail".into(),
            args: vec![],
            dst: kx,
            succ: fail,
        },
    );
    for &n in &exits {
        let exit = out.code.remove(&n).expect("exit node");
        let moved = nodes.fresh();
        out.code.insert(moved, exit);
        let e: Vec<Node> = (0..4).map(|_| nodes.fresh()).collect();
        out.code
            .insert(n, op(Operation::GetCanary, vec![], &k, e[0]));
        out.code
            .insert(e[0], op(Operation::GetSp, vec![], &ks, e[1]));
        out.code
            .insert(e[1], op(Operation::Const(off), vec![], &ko, e[2]));
        out.code.insert(
            e[2],
            op(Operation::AddPtr, vec![ks.clone(), ko.clone()], &ka, e[3]),
        );
        let check = nodes.fresh();
        out.code.insert(
            e[3],
            Instr::Load {
                addr: ka.clone(),
                off: 0,
                dst: kv.clone(),
                succ: check,
            },
        );
        out.code.insert(
            check,
            Instr::Cond {
                cond: Cond::Eq,
                args: [k.clone(), kv.clone()],
                ifso: moved,
                ifnot: fail,
            },
        );
    }
    (out, exits.len())
}
