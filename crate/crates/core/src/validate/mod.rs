//! Differential co-execution of an original and a transformed program.
//!
//! The original program is stepped one instruction at a time. After each
//! step the transformed program is advanced until it reaches a state of the
//! same shape that is related to the original one; which step counts are
//! tried depends on the simulation policy. The relation combines a value
//! relation on registers with a memory relation, both chosen per pass.

mod injection;

use std::collections::BTreeMap;
use std::fmt::{self, Write};

pub use injection::{track_injection, track_window, LogDesync};

use crate::ir::{Instr, Program};
use crate::memory::{pac_encode, BlockId, Memory, Value};
use crate::passes::{Pass, PassConfig, Stage};
use crate::relations::{
    extends, inject_match, lessdef, mem_inject, CanarySpec, InjectionMap, RaSlots,
};
use crate::semantics::{read, start_address, Event, Frame, FrameEvent, Machine, State};

pub const DEFAULT_MAX_K: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MatchKind {
    /// Registers and memory at least as defined.
    PlainLessdef,
    /// Memory extension; protected frames hold the canary in their slot.
    Extension(CanarySpec),
    /// Memory extension; lowered frames hold their return address.
    ReturnSlots(RaSlots),
    /// Memory injection tracked from frame events.
    Injection,
    /// Return-address slots and copies hold the signed original value.
    SlotEncode(RaSlots),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    Lockstep,
    Plus(usize),
    Star(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchSpec {
    pub kind: MatchKind,
    pub policy: Policy,
}

impl MatchSpec {
    /// The relation a pass is validated against. Layout metadata is derived
    /// from the stage input, never taken from the pass output.
    pub fn for_stage(stage: &Stage, cfg: &PassConfig) -> MatchSpec {
        let k = DEFAULT_MAX_K;
        let (kind, policy) = match stage.pass {
            Pass::RefineDiv => (MatchKind::PlainLessdef, Policy::Lockstep),
            Pass::Tailcall | Pass::Tailrec => (MatchKind::Injection, Policy::Star(k)),
            Pass::Canary => (
                MatchKind::Extension(CanarySpec::derive(&stage.input, cfg.fstack_protector_all)),
                Policy::Plus(k),
            ),
            Pass::LowerRa => (
                MatchKind::ReturnSlots(RaSlots::derive(&stage.input)),
                Policy::Plus(k),
            ),
            Pass::Pac => {
                let offsets = stage
                    .lowering
                    .as_ref()
                    .map(|l| {
                        l.functions
                            .iter()
                            .map(|(f, x)| (f.clone(), x.offset))
                            .collect()
                    })
                    .unwrap_or_default();
                (MatchKind::SlotEncode(RaSlots { offsets }), Policy::Plus(k))
            }
            Pass::Peephole => (MatchKind::PlainLessdef, Policy::Star(k)),
        };
        MatchSpec { kind, policy }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerdictReason {
    Accepted,
    TraceMismatch,
    RelationViolation,
    NoMatchingStep,
    FuelExhausted,
    LogDesync,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub original: String,
    pub transformed: String,
    pub step: u64,
}

/// Counts of checks performed at synchronization points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RelationLog {
    pub sync_points: u64,
    pub deferred: u64,
    pub register_checks: u64,
    pub memory_checks: u64,
    pub slot_checks: u64,
    pub canary_probes: u64,
    pub remaps: u64,
    pub original_steps: u64,
    pub transformed_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub accepted: bool,
    pub reason: VerdictReason,
    pub detail: String,
    pub counterexample: Option<Counterexample>,
    pub log: RelationLog,
}

impl Verdict {
    pub fn report(&self) -> String {
        let mut out = String::new();
        if self.accepted {
            writeln!(out, "accepted").unwrap();
        } else {
            writeln!(out, "rejected: {:?}: {}", self.reason, self.detail).unwrap();
        }
        let l = &self.log;
        writeln!(
            out,
            "sync points {}  deferred {}  register checks {}  memory checks {}  slot checks {}  canary probes {}  remaps {}",
            l.sync_points, l.deferred, l.register_checks, l.memory_checks, l.slot_checks, l.canary_probes, l.remaps
        )
        .unwrap();
        writeln!(
            out,
            "steps original {}  transformed {}",
            l.original_steps, l.transformed_steps
        )
        .unwrap();
        if let Some(c) = &self.counterexample {
            writeln!(out, "at original step {}", c.step).unwrap();
            writeln!(out, "  original:    {}", c.original).unwrap();
            writeln!(out, "  transformed: {}", c.transformed).unwrap();
        }
        out
    }
}

/// Every frame block on the stack is no larger than its function's
/// declared frame, so no offset past the declared size is accessible.
pub fn check_weakly_allocated(s: &State, p: &Program) -> bool {
    let Some(mem) = s.mem() else {
        return true;
    };
    activations(s).iter().all(|a| {
        let Value::Ptr(b, 0) = a.sp else {
            return false;
        };
        match (mem.block(b), p.function(&a.function)) {
            (Some(blk), Some(f)) => !blk.live || blk.size <= f.stacksize,
            (None, _) => true,
            (Some(_), None) => false,
        }
    })
}

/// A function activation with a frame: its function, stack pointer and
/// return address.
struct Activation {
    function: String,
    sp: Value,
    ra: Value,
}

fn activations(s: &State) -> Vec<Activation> {
    let stack = s.stack();
    let ra_of = |i: usize| match i.checked_sub(1).map(|j| &stack[j]) {
        Some(fr) => Value::code(&fr.caller, fr.ret_node),
        None => start_address(),
    };
    let mut out: Vec<Activation> = stack
        .iter()
        .enumerate()
        .map(|(i, fr)| Activation {
            function: fr.caller.clone(),
            sp: fr.caller_sp.clone(),
            ra: ra_of(i),
        })
        .collect();
    if let State::Regular { f, sp, .. } = s {
        out.push(Activation {
            function: f.clone(),
            sp: sp.clone(),
            ra: ra_of(stack.len()),
        });
    }
    out
}

fn block_of(v: &Value) -> Option<BlockId> {
    match v {
        Value::Ptr(b, 0) => Some(*b),
        _ => None,
    }
}

struct Checker<'a> {
    spec: &'a MatchSpec,
    po: &'a Program,
    canary: Value,
}

impl Checker<'_> {
    fn value_rel(&self, j: &InjectionMap, o: &Value, t: &Value, sp: &Value) -> bool {
        match &self.spec.kind {
            MatchKind::Injection => inject_match(j, o, t),
            MatchKind::SlotEncode(_) => {
                lessdef(o, t)
                    || (matches!(o, Value::Code(..) | Value::Ptr(..)) && *t == pac_encode(o, sp))
            }
            _ => lessdef(o, t),
        }
    }

    fn regs_rel(
        &self,
        j: &InjectionMap,
        o: &BTreeMap<crate::ir::Reg, Value>,
        t: &BTreeMap<crate::ir::Reg, Value>,
        sp: &Value,
        log: &mut RelationLog,
    ) -> Result<(), String> {
        for (r, v) in o {
            log.register_checks += 1;
            let w = read(t, r);
            if !self.value_rel(j, v, &w, sp) {
                return Err(format!("register {r}: original {v}, transformed {w}"));
            }
        }
        Ok(())
    }

    fn frame_rel(&self, j: &InjectionMap, o: &Frame, t: &Frame, log: &mut RelationLog) -> bool {
        o.caller == t.caller
            && o.ret_node == t.ret_node
            && o.ret_dst == t.ret_dst
            && self.value_rel(j, &o.caller_sp, &t.caller_sp, &t.caller_sp)
            && self
                .regs_rel(j, &o.caller_regs, &t.caller_regs, &t.caller_sp, log)
                .is_ok()
    }

    /// An original frame the transformed program may have dropped: the
    /// caller has no frame data and returns the result unchanged.
    fn skippable(&self, fr: &Frame) -> bool {
        let Some(f) = self.po.function(&fr.caller) else {
            return false;
        };
        f.stacksize == 0
            && match f.code.get(&fr.ret_node) {
                Some(Instr::Return(Some(r))) => *r == fr.ret_dst,
                Some(Instr::Return(None)) => true,
                _ => false,
            }
    }

    fn stacks_rel(
        &self,
        j: &InjectionMap,
        o: &[Frame],
        t: &[Frame],
        log: &mut RelationLog,
    ) -> bool {
        match (o.split_last(), t.split_last()) {
            (None, None) => true,
            (Some((fo, ro)), tl) => {
                if let Some((ft, rt)) = tl {
                    if self.frame_rel(j, fo, ft, log) && self.stacks_rel(j, ro, rt, log) {
                        return true;
                    }
                }
                matches!(self.spec.kind, MatchKind::Injection)
                    && self.skippable(fo)
                    && self.stacks_rel(j, ro, t, log)
            }
            (None, Some(_)) => false,
        }
    }

    fn mem_rel(
        &self,
        j: &InjectionMap,
        st: &State,
        mo: &Memory,
        mt: &Memory,
        pt: &Program,
        log: &mut RelationLog,
    ) -> Result<(), String> {
        log.memory_checks += 1;
        match &self.spec.kind {
            MatchKind::PlainLessdef => ok_or(extends(mo, mt), "memory extension fails"),
            MatchKind::Extension(spec) => {
                ok_or(extends(mo, mt), "memory extension fails")?;
                for a in activations(st) {
                    let Some(e) = spec.get(&a.function) else {
                        continue;
                    };
                    let Some(b) = block_of(&a.sp) else {
                        continue;
                    };
                    log.slot_checks += 1;
                    if mt.size(b) != Some(e.new_stacksize) {
                        return Err(format!(
                            "frame of {} has size {:?}, expected {}",
                            a.function,
                            mt.size(b),
                            e.new_stacksize
                        ));
                    }
                    let v = mt.load64(b, e.canary_offset as i64);
                    if v.as_ref() != Ok(&self.canary) {
                        return Err(format!("canary slot of {} holds {v:?}", a.function));
                    }
                }
                Ok(())
            }
            MatchKind::ReturnSlots(slots) => {
                ok_or(extends(mo, mt), "memory extension fails")?;
                for a in activations(st) {
                    let (Some(off), Some(b)) = (slots.get(&a.function), block_of(&a.sp)) else {
                        continue;
                    };
                    log.slot_checks += 1;
                    let v = mt.load64(b, off as i64);
                    if v.as_ref() != Ok(&a.ra) {
                        return Err(format!(
                            "return slot of {} holds {v:?}, expected {}",
                            a.function, a.ra
                        ));
                    }
                }
                Ok(())
            }
            MatchKind::SlotEncode(slots) => {
                let sps: BTreeMap<BlockId, Value> = activations(st)
                    .into_iter()
                    .filter(|a| slots.get(&a.function).is_some())
                    .filter_map(|a| block_of(&a.sp).map(|b| (b, a.sp)))
                    .collect();
                for (b, blk) in mo.live_blocks().filter(|(_, blk)| blk.size > 0) {
                    if !mt.is_live(b) || mt.size(b) < Some(blk.size) {
                        return Err(format!("block {b} missing or shrunk"));
                    }
                    let sp = sps.get(&b).cloned().unwrap_or(Value::Undef);
                    for o in (0..blk.size as i64).step_by(8) {
                        let (vo, vt) = (
                            mo.load64(b, o).unwrap_or_default(),
                            mt.load64(b, o).unwrap_or_default(),
                        );
                        if !self.value_rel(j, &vo, &vt, &sp) {
                            return Err(format!("{b}+{o}: original {vo}, transformed {vt}"));
                        }
                    }
                }
                log.slot_checks += sps.len() as u64;
                Ok(())
            }
            MatchKind::Injection => {
                ok_or(j.is_wellformed(mo), "injection overlaps")?;
                ok_or(mem_inject(j, mo, mt), "memory injection fails")?;
                ok_or(check_weakly_allocated(st, pt), "frame larger than declared")
            }
        }
    }

    /// Same shape and related contents.
    fn related(
        &self,
        j: &InjectionMap,
        so: &State,
        st: &State,
        pt: &Program,
        log: &mut RelationLog,
    ) -> Result<(), Mismatch> {
        let shape = |_: &str| Err(Mismatch::Shape);
        match (so, st) {
            (
                State::Regular {
                    stack: ko,
                    f: fo,
                    sp: spo,
                    pc: pco,
                    regs: ro,
                    mem: mo,
                },
                State::Regular {
                    stack: kt,
                    f: ft,
                    sp: spt,
                    pc: pct,
                    regs: rt,
                    mem: mt,
                },
            ) => {
                if fo != ft || pco != pct {
                    return shape("different program point");
                }
                if !self.value_rel(j, spo, spt, spt) {
                    return Err(Mismatch::Relation(format!("stack pointer {spo} vs {spt}")));
                }
                self.regs_rel(j, ro, rt, spt, log)
                    .map_err(Mismatch::Relation)?;
                if !self.stacks_rel(j, ko, kt, log) {
                    return Err(Mismatch::Relation("call stacks differ".into()));
                }
                self.mem_rel(j, st, mo, mt, pt, log)
                    .map_err(Mismatch::Relation)
            }
            (
                State::Call {
                    stack: ko,
                    callee: co,
                    args: ao,
                    mem: mo,
                },
                State::Call {
                    stack: kt,
                    callee: ct,
                    args: at,
                    mem: mt,
                },
            ) => {
                if co != ct {
                    return shape("different callee");
                }
                if ao.len() != at.len()
                    || ao
                        .iter()
                        .zip(at)
                        .any(|(a, b)| !self.value_rel(j, a, b, &Value::Undef))
                {
                    return Err(Mismatch::Relation("call arguments differ".into()));
                }
                if !self.stacks_rel(j, ko, kt, log) {
                    return Err(Mismatch::Relation("call stacks differ".into()));
                }
                self.mem_rel(j, st, mo, mt, pt, log)
                    .map_err(Mismatch::Relation)
            }
            (
                State::Return {
                    stack: ko,
                    value: vo,
                    target: to,
                    mem: mo,
                },
                State::Return {
                    stack: kt,
                    value: vt,
                    target: tt,
                    mem: mt,
                },
            ) => {
                let eff = |k: &[Frame], t: &Option<crate::ir::Node>| {
                    t.filter(|n| k.last().is_none_or(|fr| fr.ret_node != *n))
                };
                if eff(ko, to) != eff(kt, tt) {
                    return shape("different return target");
                }
                if !self.value_rel(j, vo, vt, &Value::Undef) {
                    return Err(Mismatch::Relation(format!("return value {vo} vs {vt}")));
                }
                if !self.stacks_rel(j, ko, kt, log) {
                    return Err(Mismatch::Relation("call stacks differ".into()));
                }
                self.mem_rel(j, st, mo, mt, pt, log)
                    .map_err(Mismatch::Relation)
            }
            (State::Final { value: vo, .. }, State::Final { value: vt, .. }) => {
                if self.value_rel(j, vo, vt, &Value::Undef) {
                    Ok(())
                } else {
                    Err(Mismatch::Relation(format!("final value {vo} vs {vt}")))
                }
            }
            (State::Aborted { .. }, State::Aborted { .. }) => Ok(()),
            _ => shape("different state kind"),
        }
    }
}

fn ok_or(c: bool, msg: &str) -> Result<(), String> {
    if c {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

enum Mismatch {
    Shape,
    Relation(String),
}

/// Co-executes `po` and `pt` on the same input and canary.
pub fn cosim_run(
    po: &Program,
    pt: &Program,
    spec: &MatchSpec,
    args: &[Value],
    fuel: u64,
    seed: u64,
) -> Verdict {
    let mo = Machine::new(po, seed);
    let mt = Machine::new(pt, seed);
    let checker = Checker {
        spec,
        po,
        canary: mt.canary.clone(),
    };
    let max_k = match spec.policy {
        Policy::Lockstep => 1,
        Policy::Plus(k) | Policy::Star(k) => k.max(1),
    };
    let star = matches!(spec.policy, Policy::Star(_));

    let mut so = mo.initial(args.to_vec());
    let mut st = mt.initial(args.to_vec());
    let mut j = InjectionMap::new();
    let mut pending: Vec<FrameEvent> = Vec::new();
    let mut deferrals = 0usize;
    let mut log = RelationLog::default();

    let reject = |reason, detail: String, so: &State, st: &State, log: RelationLog| Verdict {
        accepted: false,
        reason,
        detail,
        counterexample: Some(Counterexample {
            original: so.summary(),
            transformed: st.summary(),
            step: log.original_steps,
        }),
        log,
    };

    loop {
        if so.is_terminal() {
            return Verdict {
                accepted: true,
                reason: VerdictReason::Accepted,
                detail: String::new(),
                counterexample: None,
                log,
            };
        }
        if log.original_steps >= fuel {
            return reject(
                VerdictReason::FuelExhausted,
                "original program out of fuel".into(),
                &so,
                &st,
                log,
            );
        }
        let t = match mo.step(so) {
            Ok(t) => t,
            // Nothing is required of the transformed program once the
            // original has no defined behaviour.
            Err(_) => {
                return Verdict {
                    accepted: true,
                    reason: VerdictReason::Accepted,
                    detail: "original program stuck".into(),
                    counterexample: None,
                    log,
                }
            }
        };
        log.original_steps += 1;
        so = t.state;
        pending.extend(t.frame);
        let o_events = t.events;

        // Search the transformed side.
        let mut cur = st.clone();
        let mut window_events: Vec<Event> = Vec::new();
        let mut window_frames: Vec<FrameEvent> = Vec::new();
        let mut found: Option<(State, InjectionMap, usize, usize)> = None;
        let mut failure: Option<(VerdictReason, String)> = None;
        let try_candidate = |cand: &State,
                             evs: &[Event],
                             frames: &[FrameEvent],
                             log: &mut RelationLog,
                             failure: &mut Option<(VerdictReason, String)>|
         -> Option<(InjectionMap, usize)> {
            if std::mem::discriminant(cand) != std::mem::discriminant(&so) {
                return None;
            }
            let mut jc = j.clone();
            let remaps = if matches!(spec.kind, MatchKind::Injection) {
                match track_window(&mut jc, &pending, frames) {
                    Ok(n) => n,
                    Err(e) => {
                        failure.get_or_insert((VerdictReason::LogDesync, e.0));
                        return None;
                    }
                }
            } else {
                0
            };
            match checker.related(&jc, &so, cand, pt, log) {
                Ok(()) => {
                    if evs != o_events.as_slice() {
                        *failure = Some((
                            VerdictReason::TraceMismatch,
                            format!("original emitted {o_events:?}, transformed {evs:?}"),
                        ));
                        return None;
                    }
                    Some((jc, remaps))
                }
                Err(Mismatch::Relation(m)) => {
                    if failure
                        .as_ref()
                        .is_none_or(|(r, _)| *r != VerdictReason::TraceMismatch)
                    {
                        *failure = Some((VerdictReason::RelationViolation, m));
                    }
                    None
                }
                Err(Mismatch::Shape) => None,
            }
        };
        for k in 1..=max_k {
            if cur.is_terminal() {
                break;
            }
            if log.transformed_steps + k as u64 > fuel.saturating_mul(4) {
                return reject(
                    VerdictReason::FuelExhausted,
                    "transformed program out of fuel".into(),
                    &so,
                    &cur,
                    log,
                );
            }
            match mt.step(cur) {
                Ok(tt) => {
                    window_events.extend(tt.events);
                    window_frames.extend(tt.frame);
                    cur = tt.state;
                }
                Err(e) => {
                    failure.get_or_insert((
                        VerdictReason::NoMatchingStep,
                        format!("transformed program {e}"),
                    ));
                    break;
                }
            }
            if let Some((jc, n)) =
                try_candidate(&cur, &window_events, &window_frames, &mut log, &mut failure)
            {
                found = Some((cur, jc, k, n));
                break;
            }
        }
        if found.is_none() && star {
            if let Some((jc, n)) = try_candidate(&st, &[], &[], &mut log, &mut failure) {
                found = Some((st.clone(), jc, 0, n));
            }
        }
        match found {
            Some((state, jc, k, remaps)) => {
                st = state;
                log.transformed_steps += k as u64;
                j = jc;
                pending.clear();
                deferrals = 0;
                log.sync_points += 1;
                log.remaps += remaps as u64;
                if let MatchKind::Extension(cs) = &spec.kind {
                    if let Err(m) = probe_canary(po, &mt, &so, &st, cs, max_k, &mut log) {
                        return reject(VerdictReason::RelationViolation, m, &so, &st, log);
                    }
                }
            }
            None if star && o_events.is_empty() && !so.is_terminal() && deferrals < max_k => {
                deferrals += 1;
                log.deferred += 1;
            }
            None => {
                let (reason, detail) = failure.unwrap_or((
                    VerdictReason::NoMatchingStep,
                    "no related transformed state".into(),
                ));
                return reject(reason, detail, &so, &st, log);
            }
        }
    }
}

/// At a protected exit, corrupting the canary slot must make the
/// transformed program abort before its frame goes away.
fn probe_canary(
    po: &Program,
    mt: &Machine<'_>,
    so: &State,
    st: &State,
    spec: &CanarySpec,
    max_k: usize,
    log: &mut RelationLog,
) -> Result<(), String> {
    let State::Regular { f, pc, .. } = so else {
        return Ok(());
    };
    let Some(entry) = spec.get(f) else {
        return Ok(());
    };
    if !po
        .function(f)
        .and_then(|func| func.code.get(pc))
        .is_some_and(Instr::is_exit)
    {
        return Ok(());
    }
    let State::Regular { sp, mem, .. } = st else {
        return Ok(());
    };
    let Some(b) = block_of(sp) else {
        return Ok(());
    };
    log.canary_probes += 1;
    let mut mem = mem.clone();
    let forged = match &mt.canary {
        Value::Int(c) => Value::Int(!c),
        _ => Value::Int(0),
    };
    if mem.store64(b, entry.canary_offset as i64, &forged).is_err() {
        return Err(format!("canary slot of {f} is not addressable"));
    }
    let mut cur = match st.clone() {
        State::Regular {
            stack,
            f,
            sp,
            pc,
            regs,
            ..
        } => State::Regular {
            stack,
            f,
            sp,
            pc,
            regs,
            mem,
        },
        other => other,
    };
    for _ in 0..max_k * 2 {
        match mt.step(cur) {
            Ok(t) => {
                if matches!(t.state, State::Aborted { .. }) {
                    return Ok(());
                }
                if matches!(t.frame, Some(FrameEvent::Free(fb, _)) if fb == b) {
                    break;
                }
                cur = t.state;
            }
            Err(_) => break,
        }
    }
    Err(format!("corrupted canary in {f} at {pc} not detected"))
}

/// Validates one pipeline stage on one input.
pub fn validate_stage(
    stage: &Stage,
    cfg: &PassConfig,
    args: &[Value],
    fuel: u64,
    seed: u64,
) -> Verdict {
    let spec = MatchSpec::for_stage(stage, cfg);
    cosim_run(&stage.input, &stage.output, &spec, args, fuel, seed)
}

impl fmt::Display for VerdictReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
