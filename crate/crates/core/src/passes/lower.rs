use std::collections::BTreeMap;

use crate::ir::{Function, Instr, Node, NodeAllocator, Operation, Program, Reg};
use crate::relations::align8;

use super::{Fresh, PassError};

/// Where `lower_ra` put things in one function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoweredFunction {
    pub offset: u64,
    /// `getra` node; its successor stores the address.
    pub getra_node: Node,
    pub store_node: Node,
    pub returns: Vec<ReturnSite>,
}

/// A lowered return: `getsp` at `sp_node`, slot load at `load_node`,
/// `retvia` at `ret_node`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReturnSite {
    pub sp_node: Node,
    pub load_node: Node,
    pub ret_node: Node,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoweringInfo {
    pub functions: BTreeMap<String, LoweredFunction>,
}

/// Saves the return address in a stack slot on entry and returns through
/// the saved copy. Functions that call nothing are left alone.
pub fn pass_lower_ra(p: &Program) -> (Program, LoweringInfo) {
    let mut out = Program::new(p.main.clone());
    let mut info = LoweringInfo::default();
    for f in p.functions.values() {
        if !f.calls_anything() {
            out.add(f.clone());
            continue;
        }
        let (g, l) = lower(f);
        info.functions.insert(f.name.clone(), l);
        out.add(g);
    }
    (out, info)
}

fn lower(f: &Function) -> (Function, LoweredFunction) {
    let mut out = f.clone();
    let offset = align8(f.stacksize);
    out.stacksize = offset + 8;
    let off = offset as i64;
    let mut nodes = NodeAllocator::for_function(f);
    let mut fresh = Fresh::new(f);
    let (sp, ra, s, rr) = (
        fresh.reg("sp"),
        fresh.reg("ra"),
        fresh.reg("s"),
        fresh.reg("rr"),
    );

    let (n0, n1, n2) = (nodes.fresh(), nodes.fresh(), nodes.fresh());
    out.code.insert(
        n0,
        Instr::Op {
            op: Operation::GetSp,
            args: vec![],
            dst: sp.clone(),
            succ: n1,
        },
    );
    out.code.insert(
        n1,
        Instr::Op {
            op: Operation::GetRa,
            args: vec![],
            dst: ra.clone(),
            succ: n2,
        },
    );
    out.code.insert(
        n2,
        Instr::Store {
            addr: sp,
            off,
            src: ra,
            succ: f.entry,
        },
    );
    out.entry = n0;

    let mut returns = Vec::new();
    for (&n, instr) in &f.code {
        let Instr::Return(value) = instr else {
            continue;
        };
        let (load, ret) = (nodes.fresh(), nodes.fresh());
        out.code.insert(
            n,
            Instr::Op {
                op: Operation::GetSp,
                args: vec![],
                dst: s.clone(),
                succ: load,
            },
        );
        out.code.insert(
            load,
            Instr::Load {
                addr: s.clone(),
                off,
                dst: rr.clone(),
                succ: ret,
            },
        );
        out.code.insert(
            ret,
            Instr::RetVia {
                ra: rr.clone(),
                value: value.clone(),
            },
        );
        returns.push(ReturnSite {
            sp_node: n,
            load_node: load,
            ret_node: ret,
        });
    }
    (
        out,
        LoweredFunction {
            offset,
            getra_node: n1,
            store_node: n2,
            returns,
        },
    )
}

/// Signs the saved return address with the frame's stack pointer before
/// storing it and authenticates it after reloading.
pub fn pass_pac(p: &Program, info: &LoweringInfo) -> Result<Program, PassError> {
    pac_impl(p, info, false)
}

/// `zero_modifier` authenticates against a constant instead of `sp`.
pub(crate) fn pac_impl(
    p: &Program,
    info: &LoweringInfo,
    zero_modifier: bool,
) -> Result<Program, PassError> {
    let mut out = Program::new(p.main.clone());
    for f in p.functions.values() {
        match info.functions.get(&f.name) {
            Some(l) => out.add(sign(f, l, zero_modifier)?),
            None if f.calls_anything() => return Err(PassError::NotLowered(f.name.clone())),
            None => out.add(f.clone()),
        }
    }
    Ok(out)
}

fn shape(f: &Function, node: Node, detail: &str) -> PassError {
    PassError::UnexpectedShape {
        function: f.name.clone(),
        node,
        detail: detail.to_string(),
    }
}

fn sign(f: &Function, l: &LoweredFunction, zero_modifier: bool) -> Result<Function, PassError> {
    let mut out = f.clone();
    let mut nodes = NodeAllocator::for_function(f);
    let mut fresh = Fresh::new(f);

    let ra = match f.code.get(&l.getra_node) {
        Some(Instr::Op {
            op: Operation::GetRa,
            dst,
            succ,
            ..
        }) if *succ == l.store_node => dst.clone(),
        _ => {
            return Err(shape(
                f,
                l.getra_node,
                "expected getra before the slot store",
            ))
        }
    };
    let sp = match f.code.get(&l.store_node) {
        Some(Instr::Store { addr, src, off, .. }) if *src == ra && *off == l.offset as i64 => {
            addr.clone()
        }
        _ => return Err(shape(f, l.store_node, "expected the return-address store")),
    };
    let enc = nodes.fresh();
    out.code.insert(
        enc,
        Instr::Op {
            op: Operation::PacEncode,
            args: vec![ra.clone(), sp],
            dst: ra.clone(),
            succ: l.store_node,
        },
    );
    if let Some(Instr::Op { succ, .. }) = out.code.get_mut(&l.getra_node) {
        *succ = enc;
    }

    let zero: Option<Reg> = zero_modifier.then(|| fresh.reg("z"));
    for site in &l.returns {
        let (s, rr) = match f.code.get(&site.load_node) {
            Some(Instr::Load {
                addr,
                dst,
                succ,
                off,
                ..
            }) if *succ == site.ret_node && *off == l.offset as i64 => (addr.clone(), dst.clone()),
            _ => return Err(shape(f, site.load_node, "expected the return-address load")),
        };
        match f.code.get(&site.ret_node) {
            Some(Instr::RetVia { ra, .. }) if *ra == rr => {}
            _ => {
                return Err(shape(
                    f,
                    site.ret_node,
                    "expected retvia through the loaded slot",
                ))
            }
        }
        let dec = nodes.fresh();
        let modifier = match &zero {
            Some(z) => {
                let c = nodes.fresh();
                out.code.insert(
                    c,
                    Instr::Op {
                        op: Operation::Const(0),
                        args: vec![],
                        dst: z.clone(),
                        succ: dec,
                    },
                );
                if let Some(Instr::Load { succ, .. }) = out.code.get_mut(&site.load_node) {
                    *succ = c;
                }
                z.clone()
            }
            None => {
                if let Some(Instr::Load { succ, .. }) = out.code.get_mut(&site.load_node) {
                    *succ = dec;
                }
                s
            }
        };
        out.code.insert(
            dec,
            Instr::Op {
                op: Operation::PacDecode,
                args: vec![rr.clone(), modifier],
                dst: rr,
                succ: site.ret_node,
            },
        );
    }
    Ok(out)
}
