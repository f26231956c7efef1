use crate::ir::{builtin_arity, Function, Instr, NodeAllocator, Operation, Program};

use super::{Counts, Fresh};

/// Replaces every strict division by the total one.
pub fn pass_refine_div(p: &Program) -> (Program, Counts) {
    let mut out = p.clone();
    let mut counts = Vec::new();
    for f in out.functions.values_mut() {
        let mut n = 0;
        for instr in f.code.values_mut() {
            if let Instr::Op { op, .. } = instr {
                if *op == Operation::DivStrict {
                    *op = Operation::DivTotal;
                    n += 1;
                }
            }
        }
        counts.push((f.name.clone(), n));
    }
    (out, counts)
}

/// In a function without a stack frame, turns `d = call g(..)` followed
/// directly by `return d` (or a bare `return`) into `tailcall g(..)`.
pub fn pass_tailcall(f: &Function, p: &Program) -> (Function, usize) {
    if f.stacksize != 0 {
        return (f.clone(), 0);
    }
    let mut out = f.clone();
    let mut n = 0;
    for instr in out.code.values_mut() {
        let Instr::Call {
            callee,
            args,
            dst,
            succ,
        } = instr
        else {
            continue;
        };
        if p.function(callee).is_none() && builtin_arity(callee).is_some() {
            continue;
        }
        let returns_it = match f.code.get(succ) {
            Some(Instr::Return(Some(r))) => r == dst,
            Some(Instr::Return(None)) => true,
            _ => false,
        };
        if returns_it {
            *instr = Instr::Tailcall {
                callee: callee.clone(),
                args: std::mem::take(args),
            };
            n += 1;
        }
    }
    (out, n)
}

/// Turns self tail calls into parameter copies and a branch to the entry.
pub fn pass_tailrec(f: &Function) -> (Function, usize) {
    tailrec_impl(f, false)
}

/// `swapped` emits the two copy phases in the wrong order.
pub(crate) fn tailrec_impl(f: &Function, swapped: bool) -> (Function, usize) {
    let sites: Vec<_> = f
        .code
        .iter()
        .filter_map(|(&n, i)| match i {
            Instr::Tailcall { callee, args }
                if *callee == f.name && args.len() == f.params.len() =>
            {
                Some((n, args.clone()))
            }
            _ => None,
        })
        .collect();
    if sites.is_empty() {
        return (f.clone(), 0);
    }
    let mut out = f.clone();
    let mut nodes = NodeAllocator::for_function(f);
    let mut fresh = Fresh::new(f);
    let temps: Vec<_> = (1..=f.params.len())
        .map(|i| fresh.reg(&format!("t{i}")))
        .collect();
    for (site, args) in &sites {
        let mut moves: Vec<(Operation, Vec<_>, _)> = Vec::new();
        let to_temps = temps
            .iter()
            .zip(args)
            .map(|(t, a)| (Operation::Move, vec![a.clone()], t.clone()));
        let to_params = f
            .params
            .iter()
            .zip(&temps)
            .map(|(p, t)| (Operation::Move, vec![t.clone()], p.clone()));
        if swapped {
            moves.extend(to_params);
            moves.extend(to_temps);
        } else {
            moves.extend(to_temps);
            moves.extend(to_params);
        }
        if moves.is_empty() {
            moves.push((Operation::Const(0), Vec::new(), fresh.reg("t0")));
        }
        let mut at = *site;
        let last = moves.len() - 1;
        for (i, (op, margs, dst)) in moves.into_iter().enumerate() {
            let succ = if i == last { f.entry } else { nodes.fresh() };
            out.code.insert(
                at,
                Instr::Op {
                    op,
                    args: margs,
                    dst,
                    succ,
                },
            );
            at = succ;
        }
    }
    (out, sites.len())
}
