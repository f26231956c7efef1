//! Small-step interpreter.
//!
//! Machine states are regular (inside a function), call (about to enter a
//! callee) or return (about to resume a caller). Every function activation
//! owns one memory block as its stack frame, allocated on entry and freed
//! on exit.

mod eval;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::ir::{builtin_arity, Cond, Function, Instr, Node, Operation, Program, Reg};
use crate::memory::{pac_decode, BlockId, MemError, Memory, Value};

pub(crate) use eval::{cmp_eq, cmp_lt};
pub use eval::{eval_op, OpCtx};

pub const DEFAULT_FUEL: u64 = 10_000_000;

pub const STACK_SMASHING: &str = "*** stack smashing detected ***: terminated";

/// Function name used for the return address of `main`.
pub const START: &str = "$start";

pub fn start_address() -> Value {
    Value::code(START, Node(1))
}

pub type Regs = BTreeMap<Reg, Value>;

pub fn read(regs: &Regs, r: &Reg) -> Value {
    regs.get(r).cloned().unwrap_or(Value::Undef)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub ret_dst: Reg,
    pub caller: String,
    pub caller_regs: Regs,
    pub ret_node: Node,
    pub caller_sp: Value,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum State {
    Regular {
        stack: Vec<Frame>,
        f: String,
        sp: Value,
        pc: Node,
        regs: Regs,
        mem: Memory,
    },
    Call {
        stack: Vec<Frame>,
        callee: String,
        args: Vec<Value>,
        mem: Memory,
    },
    /// `target` is set when returning through an explicit code address.
    Return {
        stack: Vec<Frame>,
        value: Value,
        target: Option<Node>,
        mem: Memory,
    },
    Final {
        value: Value,
        mem: Memory,
    },
    Aborted {
        msg: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StateKind {
    Regular,
    Call,
    Return,
    Final,
    Aborted,
}

impl State {
    pub fn initial(main: &str, args: Vec<Value>, mem: Memory) -> State {
        State::Call {
            stack: Vec::new(),
            callee: main.to_string(),
            args,
            mem,
        }
    }

    pub fn kind(&self) -> StateKind {
        match self {
            State::Regular { .. } => StateKind::Regular,
            State::Call { .. } => StateKind::Call,
            State::Return { .. } => StateKind::Return,
            State::Final { .. } => StateKind::Final,
            State::Aborted { .. } => StateKind::Aborted,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, State::Final { .. } | State::Aborted { .. })
    }

    pub fn mem(&self) -> Option<&Memory> {
        match self {
            State::Regular { mem, .. }
            | State::Call { mem, .. }
            | State::Return { mem, .. }
            | State::Final { mem, .. } => Some(mem),
            State::Aborted { .. } => None,
        }
    }

    pub fn stack(&self) -> &[Frame] {
        match self {
            State::Regular { stack, .. }
            | State::Call { stack, .. }
            | State::Return { stack, .. } => stack,
            _ => &[],
        }
    }

    /// Short human-readable description.
    pub fn summary(&self) -> String {
        match self {
            State::Regular {
                stack, f, sp, pc, ..
            } => format!("regular {f}@{pc} sp={sp} depth={}", stack.len()),
            State::Call {
                stack,
                callee,
                args,
                ..
            } => format!("call {callee}({args:?}) depth={}", stack.len()),
            State::Return {
                stack,
                value,
                target,
                ..
            } => match target {
                Some(n) => format!("return {value} via {n} depth={}", stack.len()),
                None => format!("return {value} depth={}", stack.len()),
            },
            State::Final { value, .. } => format!("final {value}"),
            State::Aborted { msg } => format!("aborted: {msg}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    ExtCall(String, Vec<i64>),
    Abort(String),
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::ExtCall(name, args) => {
                let a: Vec<String> = args.iter().map(|x| x.to_string()).collect();
                write!(f, "extcall {name}({})", a.join(", "))
            }
            Event::Abort(msg) => write!(f, "abort: {msg}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameEvent {
    Alloc(BlockId, u64),
    Free(BlockId, u64),
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum StuckReason {
    #[error("division error")]
    DivideError,
    #[error("branch on undefined value")]
    UndefCondition,
    #[error("memory fault: {0}")]
    MemFault(MemError),
    #[error("bad return address {0}")]
    BadReturnAddress(Value),
    #[error("undefined or non-integer value passed to {0}")]
    UndefObservable(String),
    #[error("arity mismatch calling {0}")]
    ArityMismatch(String),
    #[error("jump table index out of range")]
    JumptableRange,
    /// Only reachable on programs that are not well formed.
    #[error("malformed program: {0}")]
    Malformed(String),
}

impl StuckReason {
    pub fn kind(&self) -> &'static str {
        match self {
            StuckReason::DivideError => "DivideError",
            StuckReason::UndefCondition => "UndefCondition",
            StuckReason::MemFault(_) => "MemFault",
            StuckReason::BadReturnAddress(_) => "BadReturnAddress",
            StuckReason::UndefObservable(_) => "UndefObservable",
            StuckReason::ArityMismatch(_) => "ArityMismatch",
            StuckReason::JumptableRange => "JumptableRange",
            StuckReason::Malformed(_) => "Malformed",
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("stuck at {at}: {reason}")]
pub struct Stuck {
    pub reason: StuckReason,
    pub at: String,
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub state: State,
    pub events: Vec<Event>,
    pub frame: Option<FrameEvent>,
}

/// Deterministic canary word for a seed: a bijective 64-bit mix, never 0.
pub fn canary_value(seed: u64) -> i64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    if z == 0 {
        1
    } else {
        z as i64
    }
}

/// Steps states of one program under a fixed canary.
#[derive(Clone, Debug)]
pub struct Machine<'p> {
    pub prog: &'p Program,
    pub canary: Value,
}

fn frame_block(sp: &Value) -> Option<BlockId> {
    match sp {
        Value::Ptr(b, 0) => Some(*b),
        _ => None,
    }
}

impl<'p> Machine<'p> {
    pub fn new(prog: &'p Program, seed: u64) -> Machine<'p> {
        Machine {
            prog,
            canary: Value::Int(canary_value(seed)),
        }
    }

    pub fn initial(&self, args: Vec<Value>) -> State {
        State::initial(&self.prog.main, args, Memory::new())
    }

    fn func(&self, name: &str, at: &str) -> Result<&'p Function, Stuck> {
        self.prog.function(name).ok_or_else(|| Stuck {
            reason: StuckReason::Malformed(format!("no function `{name}`")),
            at: at.to_string(),
        })
    }

    pub fn step(&self, s: State) -> Result<Transition, Stuck> {
        match s {
            State::Regular {
                stack,
                f,
                sp,
                pc,
                regs,
                mem,
            } => self.step_regular(stack, f, sp, pc, regs, mem),
            State::Call {
                stack,
                callee,
                args,
                mut mem,
            } => {
                let func = self.func(&callee, &callee)?;
                if func.params.len() != args.len() {
                    return Err(Stuck {
                        reason: StuckReason::ArityMismatch(callee.clone()),
                        at: format!("call {callee}"),
                    });
                }
                let b = mem.alloc(func.stacksize);
                let regs = func.params.iter().cloned().zip(args).collect();
                Ok(Transition {
                    state: State::Regular {
                        stack,
                        f: callee,
                        sp: Value::Ptr(b, 0),
                        pc: func.entry,
                        regs,
                        mem,
                    },
                    events: Vec::new(),
                    frame: Some(FrameEvent::Alloc(b, func.stacksize)),
                })
            }
            State::Return {
                mut stack,
                value,
                target,
                mem,
            } => {
                let state = match stack.pop() {
                    None => State::Final { value, mem },
                    Some(fr) => {
                        let mut regs = fr.caller_regs;
                        let pc = match target {
                            Some(n) if n != fr.ret_node => n,
                            _ => {
                                regs.insert(fr.ret_dst, value);
                                fr.ret_node
                            }
                        };
                        State::Regular {
                            stack,
                            f: fr.caller,
                            sp: fr.caller_sp,
                            pc,
                            regs,
                            mem,
                        }
                    }
                };
                Ok(Transition {
                    state,
                    events: Vec::new(),
                    frame: None,
                })
            }
            State::Final { .. } | State::Aborted { .. } => Err(Stuck {
                reason: StuckReason::Malformed("step from a terminal state".into()),
                at: s.summary(),
            }),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step_regular(
        &self,
        mut stack: Vec<Frame>,
        f: String,
        sp: Value,
        pc: Node,
        mut regs: Regs,
        mut mem: Memory,
    ) -> Result<Transition, Stuck> {
        let at = || format!("{f}@{pc}");
        let stuck = |reason| Err(Stuck { reason, at: at() });
        let func = self.func(&f, &at())?;
        let Some(instr) = func.code.get(&pc) else {
            return stuck(StuckReason::Malformed(format!("no node {pc}")));
        };
        let mut events = Vec::new();
        let mut frame = None;

        // Leaving the function: free the frame and enter a return state.
        let leave = |mem: &mut Memory, frame: &mut Option<FrameEvent>| -> Result<(), Stuck> {
            let b = frame_block(&sp).ok_or_else(|| Stuck {
                reason: StuckReason::Malformed("stack pointer is not a frame".into()),
                at: at(),
            })?;
            let size = mem.size(b).unwrap_or(0);
            mem.free(b).map_err(|e| Stuck {
                reason: StuckReason::MemFault(e),
                at: at(),
            })?;
            *frame = Some(FrameEvent::Free(b, size));
            Ok(())
        };

        let next = match instr {
            Instr::Op {
                op,
                args,
                dst,
                succ,
            } => {
                let vals: Vec<Value> = args.iter().map(|r| read(&regs, r)).collect();
                if *op == Operation::DivStrict && eval::div_strict_fails(&vals) {
                    return stuck(StuckReason::DivideError);
                }
                let ctx = OpCtx {
                    canary: self.canary.clone(),
                    sp: sp.clone(),
                    ra: match stack.last() {
                        Some(fr) => Value::code(&fr.caller, fr.ret_node),
                        None => start_address(),
                    },
                };
                let v = eval_op(op, &vals, &ctx, &mem);
                regs.insert(dst.clone(), v);
                Some(*succ)
            }
            Instr::Load {
                addr,
                off,
                dst,
                succ,
            } => {
                let v = match read(&regs, addr) {
                    Value::Ptr(b, o) => mem.load64(b, o.wrapping_add(*off)),
                    _ => return stuck(StuckReason::MemFault(MemError::UnknownBlock(BlockId(0)))),
                };
                match v {
                    Ok(v) => {
                        regs.insert(dst.clone(), v);
                        Some(*succ)
                    }
                    Err(e) => return stuck(StuckReason::MemFault(e)),
                }
            }
            Instr::Store {
                addr,
                off,
                src,
                succ,
            } => {
                let r = match read(&regs, addr) {
                    Value::Ptr(b, o) => mem.store64(b, o.wrapping_add(*off), &read(&regs, src)),
                    _ => return stuck(StuckReason::MemFault(MemError::UnknownBlock(BlockId(0)))),
                };
                if let Err(e) = r {
                    return stuck(StuckReason::MemFault(e));
                }
                Some(*succ)
            }
            Instr::ExtCall {
                name,
                args,
                dst,
                succ,
            }
            | Instr::Call {
                callee: name,
                args,
                dst,
                succ,
            } if builtin_arity(name).is_some()
                && (matches!(instr, Instr::ExtCall { .. })
                    || self.prog.function(name).is_none()) =>
            {
                let vals: Vec<Value> = args.iter().map(|r| read(&regs, r)).collect();
                match self.builtin(name, &vals, &at())? {
                    Ok((ev, v)) => {
                        events.push(ev);
                        regs.insert(dst.clone(), v);
                        Some(*succ)
                    }
                    Err(ev) => {
                        return Ok(Transition {
                            state: State::Aborted {
                                msg: STACK_SMASHING.to_string(),
                            },
                            events: vec![ev],
                            frame: None,
                        })
                    }
                }
            }
            Instr::ExtCall { name, .. } => {
                return stuck(StuckReason::Malformed(format!("unknown builtin `{name}`")))
            }
            Instr::Call {
                callee,
                args,
                dst,
                succ,
            } => {
                let vals = args.iter().map(|r| read(&regs, r)).collect();
                stack.push(Frame {
                    ret_dst: dst.clone(),
                    caller: f.clone(),
                    caller_regs: regs,
                    ret_node: *succ,
                    caller_sp: sp.clone(),
                });
                return Ok(Transition {
                    state: State::Call {
                        stack,
                        callee: callee.clone(),
                        args: vals,
                        mem,
                    },
                    events,
                    frame,
                });
            }
            Instr::Tailcall { callee, args } => {
                let vals: Vec<Value> = args.iter().map(|r| read(&regs, r)).collect();
                if builtin_arity(callee).is_some() && self.prog.function(callee).is_none() {
                    let outcome = self.builtin(callee, &vals, &at())?;
                    leave(&mut mem, &mut frame)?;
                    let state = match outcome {
                        Ok((ev, v)) => {
                            events.push(ev);
                            State::Return {
                                stack,
                                value: v,
                                target: None,
                                mem,
                            }
                        }
                        Err(ev) => {
                            events.push(ev);
                            State::Aborted {
                                msg: STACK_SMASHING.to_string(),
                            }
                        }
                    };
                    return Ok(Transition {
                        state,
                        events,
                        frame,
                    });
                }
                leave(&mut mem, &mut frame)?;
                return Ok(Transition {
                    state: State::Call {
                        stack,
                        callee: callee.clone(),
                        args: vals,
                        mem,
                    },
                    events,
                    frame,
                });
            }
            Instr::Cond {
                cond,
                args: [a, b],
                ifso,
                ifnot,
            } => {
                let (a, b) = (read(&regs, a), read(&regs, b));
                let v = match cond {
                    Cond::Eq | Cond::Ne => cmp_eq(&a, &b, &mem),
                    Cond::Lt | Cond::Ge => cmp_lt(&a, &b, &mem),
                };
                let Value::Int(t) = v else {
                    return stuck(StuckReason::UndefCondition);
                };
                let holds = (t != 0) ^ matches!(cond, Cond::Ne | Cond::Ge);
                Some(if holds { *ifso } else { *ifnot })
            }
            Instr::Jumptable { index, targets } => match read(&regs, index) {
                Value::Int(i) if i >= 0 && (i as usize) < targets.len() => {
                    Some(targets[i as usize])
                }
                Value::Int(_) => return stuck(StuckReason::JumptableRange),
                _ => return stuck(StuckReason::UndefCondition),
            },
            Instr::Return(r) => {
                let value = r.as_ref().map_or(Value::Undef, |r| read(&regs, r));
                leave(&mut mem, &mut frame)?;
                return Ok(Transition {
                    state: State::Return {
                        stack,
                        value,
                        target: None,
                        mem,
                    },
                    events,
                    frame,
                });
            }
            Instr::RetVia { ra, value } | Instr::RetAa { ra, value } => {
                let mut addr = read(&regs, ra);
                if matches!(instr, Instr::RetAa { .. }) {
                    addr = pac_decode(&addr, &sp);
                    regs.insert(ra.clone(), Value::Undef);
                }
                let value = value.as_ref().map_or(Value::Undef, |r| read(&regs, r));
                let target = match (&addr, stack.last()) {
                    (Value::Code(g, n), Some(fr)) if **g == *fr.caller => {
                        let caller = self.func(&fr.caller, &at())?;
                        caller.code.contains_key(n).then_some(*n)
                    }
                    (Value::Code(g, n), None) if &**g == START && *n == Node(1) => None,
                    _ => return stuck(StuckReason::BadReturnAddress(addr)),
                };
                if target.is_none() && !stack.is_empty() {
                    return stuck(StuckReason::BadReturnAddress(addr));
                }
                leave(&mut mem, &mut frame)?;
                return Ok(Transition {
                    state: State::Return {
                        stack,
                        value,
                        target,
                        mem,
                    },
                    events,
                    frame,
                });
            }
        };
        Ok(Transition {
            state: State::Regular {
                stack,
                f,
                sp,
                pc: next.expect("straight-line successor"),
                regs,
                mem,
            },
            events,
            frame,
        })
    }

    /// Runs a builtin: `Ok` carries its event and result, `Err` the abort
    /// event.
    #[allow(clippy::type_complexity)]
    fn builtin(
        &self,
        name: &str,
        args: &[Value],
        at: &str,
    ) -> Result<Result<(Event, Value), Event>, Stuck> {
        if builtin_arity(name) != Some(args.len()) {
            return Err(Stuck {
                reason: StuckReason::ArityMismatch(name.to_string()),
                at: at.to_string(),
            });
        }
        match name {
            "print_int" => match args[0] {
                Value::Int(i) => Ok(Ok((
                    Event::ExtCall(name.to_string(), vec![i]),
                    Value::Int(0),
                ))),
                _ => Err(Stuck {
                    reason: StuckReason::UndefObservable(name.to_string()),
                    at: at.to_string(),
                }),
            },
            _ => Ok(Err(Event::Abort(STACK_SMASHING.to_string()))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub steps: u64,
    pub allocs: u64,
    pub frees: u64,
    pub max_live_frames: u64,
}

impl ExecStats {
    pub(crate) fn record(&mut self, ev: Option<FrameEvent>, live: &mut u64) {
        self.steps += 1;
        match ev {
            Some(FrameEvent::Alloc(..)) => {
                self.allocs += 1;
                *live += 1;
                self.max_live_frames = self.max_live_frames.max(*live);
            }
            Some(FrameEvent::Free(..)) => {
                self.frees += 1;
                *live -= 1;
            }
            None => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Final(Value),
    Aborted(String),
    Stuck(Stuck),
    OutOfFuel,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Final(_) => "final",
            Outcome::Aborted(_) => "aborted",
            Outcome::Stuck(_) => "stuck",
            Outcome::OutOfFuel => "out-of-fuel",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Final(v) => write!(f, "final {v}"),
            Outcome::Aborted(m) => write!(f, "aborted: {m}"),
            Outcome::Stuck(s) => write!(f, "{s}"),
            Outcome::OutOfFuel => write!(f, "out of fuel"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub outcome: Outcome,
    pub trace: Vec<Event>,
    pub stats: ExecStats,
    pub alloc_log: Vec<FrameEvent>,
}

/// Runs `p` from a call to its main function.
pub fn run(p: &Program, args: Vec<Value>, fuel: u64, canary_seed: u64) -> RunResult {
    let m = Machine::new(p, canary_seed);
    let mut state = m.initial(args);
    let mut res = RunResult {
        outcome: Outcome::OutOfFuel,
        trace: Vec::new(),
        stats: ExecStats::default(),
        alloc_log: Vec::new(),
    };
    let mut live = 0;
    while res.stats.steps < fuel {
        match m.step(state) {
            Ok(t) => {
                res.stats.record(t.frame, &mut live);
                res.alloc_log.extend(t.frame);
                res.trace.extend(t.events);
                state = t.state;
                match state {
                    State::Final { value, .. } => {
                        res.outcome = Outcome::Final(value);
                        return res;
                    }
                    State::Aborted { msg } => {
                        res.outcome = Outcome::Aborted(msg);
                        return res;
                    }
                    _ => {}
                }
            }
            Err(s) => {
                res.outcome = Outcome::Stuck(s);
                return res;
            }
        }
    }
    res
}

/// Integer arguments as values.
pub fn int_args(xs: &[i64]) -> Vec<Value> {
    xs.iter().map(|&x| Value::Int(x)).collect()
}
