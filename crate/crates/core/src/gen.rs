//! Seeded random program generator.
//!
//! Programs terminate by construction: calls only go to functions with a
//! higher index, loops run a constant number of times, and self-recursive
//! functions count down a depth argument that callers pass as a small
//! constant. Registers that feed arithmetic or output always hold integers,
//! except after the occasional deliberate fault (out-of-bounds store,
//! division by zero, out-of-frame pointer comparison).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{Cond, Function, Instr, Node, Operation, Program, Reg};

pub const DEFAULT_BUDGET: usize = 12;
const MAX_DEPTH_ARG: i64 = 12;

#[derive(Clone, Debug)]
struct Sig {
    name: String,
    arity: usize,
    recursive: bool,
}

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    stacksize: u64,
    code: BTreeMap<Node, Instr>,
    next: u32,
    defined: Vec<Reg>,
    protected: Vec<Reg>,
    fresh: usize,
    sp: Option<Reg>,
    one: Reg,
    zero: Reg,
    callees: &'r [Sig],
    budget: usize,
}

fn op(op: Operation, args: Vec<Reg>, dst: Reg) -> impl FnOnce(Node) -> Instr {
    move |succ| Instr::Op {
        op,
        args,
        dst,
        succ,
    }
}

impl Builder<'_> {
    /// Emits an instruction falling through to the next node id.
    fn push(&mut self, make: impl FnOnce(Node) -> Instr) -> Node {
        let n = Node(self.next);
        self.next += 1;
        let i = make(Node(self.next));
        self.code.insert(n, i);
        n
    }

    /// Emits an instruction whose successors are patched later.
    fn hole(&mut self) -> Node {
        let n = Node(self.next);
        self.next += 1;
        n
    }

    fn here(&self) -> Node {
        Node(self.next)
    }

    fn new_reg(&mut self) -> Reg {
        self.fresh += 1;
        Reg::new(format!("r{}", self.fresh))
    }

    fn pick(&mut self) -> Reg {
        self.defined
            .choose(self.rng)
            .cloned()
            .unwrap_or_else(|| self.one.clone())
    }

    /// A destination: a fresh register, or an unprotected defined one.
    fn dst(&mut self) -> Reg {
        if self.rng.gen_bool(0.3) {
            let pool: Vec<Reg> = self
                .defined
                .iter()
                .filter(|r| !self.protected.contains(r))
                .cloned()
                .collect();
            if let Some(r) = pool.choose(self.rng) {
                return r.clone();
            }
        }
        let r = self.new_reg();
        self.defined.push(r.clone());
        r
    }

    fn konst(&mut self, k: i64) -> Reg {
        let r = self.dst();
        self.push(op(Operation::Const(k), vec![], r.clone()));
        r
    }

    fn slot(&mut self) -> i64 {
        8 * self.rng.gen_range(0..self.stacksize / 8) as i64
    }

    fn block(&mut self, depth: usize) {
        let n = self.rng.gen_range(1..=self.budget.max(1));
        for _ in 0..n {
            self.stmt(depth);
        }
    }

    fn stmt(&mut self, depth: usize) {
        let framed = self.sp.is_some();
        let roll = self.rng.gen_range(0..100);
        match roll {
            0..=29 => {
                let o = [Operation::Add, Operation::Sub, Operation::Mul]
                    .choose(self.rng)
                    .unwrap()
                    .clone();
                let (a, b) = (self.pick(), self.pick());
                let d = self.dst();
                self.push(op(o, vec![a, b], d));
            }
            30..=37 => {
                let k = self.rng.gen_range(-50..=50);
                self.konst(k);
            }
            38..=51 if framed => {
                let sp = self.sp.clone().unwrap();
                let off = self.slot();
                if self.rng.gen_bool(0.5) {
                    let v = self.pick();
                    self.push(|succ| Instr::Store {
                        addr: sp,
                        off,
                        src: v,
                        succ,
                    });
                } else {
                    let d = self.dst();
                    self.push(|succ| Instr::Load {
                        addr: sp,
                        off,
                        dst: d,
                        succ,
                    });
                }
            }
            52..=59 => {
                let v = self.pick();
                let d = self.new_reg();
                self.push(|succ| Instr::ExtCall {
                    name: "print_int".into(),
                    args: vec![v],
                    dst: d,
                    succ,
                });
            }
            60..=67 if depth < 2 => self.diamond(depth),
            68..=73 if depth < 2 => self.counted_loop(depth),
            74..=83 if !self.callees.is_empty() => {
                self.call(false);
            }
            84..=87 => {
                let a = self.pick();
                let k = if self.rng.gen_ratio(1, 8) {
                    0
                } else {
                    self.rng.gen_range(1..=7)
                };
                let b = self.konst(k);
                let o = if self.rng.gen_bool(0.7) {
                    Operation::DivStrict
                } else {
                    Operation::DivTotal
                };
                // A quotient by zero is undefined or stuck; keep it out of the pool.
                let d = if k == 0 { self.new_reg() } else { self.dst() };
                self.push(op(o, vec![a, b], d));
            }
            88..=89 if framed => self.pointer_compare(),
            90 if framed => {
                let sp = self.sp.clone().unwrap();
                let off = self.stacksize as i64;
                let v = self.pick();
                self.push(|succ| Instr::Store {
                    addr: sp,
                    off,
                    src: v,
                    succ,
                });
            }
            91..=93 if depth < 2 => self.switch(depth),
            _ => {
                let a = self.pick();
                let d = self.dst();
                self.push(op(Operation::Move, vec![a], d));
            }
        }
    }

    fn cond(&mut self) -> (Cond, [Reg; 2]) {
        let c = *[Cond::Eq, Cond::Lt, Cond::Ge, Cond::Ne]
            .choose(self.rng)
            .unwrap();
        (c, [self.pick(), self.pick()])
    }

    fn diamond(&mut self, depth: usize) {
        let (cond, args) = self.cond();
        let branch = self.hole();
        let saved = self.defined.clone();
        let ifso = self.here();
        self.block(depth + 1);
        let jump_so = self.hole();
        self.defined = saved.clone();
        let ifnot = self.here();
        self.block(depth + 1);
        let jump_not = self.hole();
        self.defined = saved;
        let join = self.push(op(
            Operation::Move,
            vec![self.one.clone()],
            self.one.clone(),
        ));
        self.code.insert(
            branch,
            Instr::Cond {
                cond,
                args,
                ifso,
                ifnot,
            },
        );
        for j in [jump_so, jump_not] {
            let one = self.one.clone();
            self.code
                .insert(j, op(Operation::Move, vec![one.clone()], one)(join));
        }
    }

    fn counted_loop(&mut self, depth: usize) {
        let times = self.rng.gen_range(1..=4);
        let c = self.new_reg();
        self.push(op(Operation::Const(times), vec![], c.clone()));
        self.protected.push(c.clone());
        let head = self.here();
        self.block(depth + 1);
        self.push(op(
            Operation::Sub,
            vec![c.clone(), self.one.clone()],
            c.clone(),
        ));
        let test = self.hole();
        let exit = self.here();
        self.code.insert(
            test,
            Instr::Cond {
                cond: Cond::Lt,
                args: [self.zero.clone(), c.clone()],
                ifso: head,
                ifnot: exit,
            },
        );
        self.protected.pop();
        self.defined.push(c);
    }

    fn switch(&mut self, depth: usize) {
        let arms = self.rng.gen_range(1..=3);
        let k = self.rng.gen_range(0..arms);
        let idx = self.konst(k);
        let jt = self.hole();
        let saved = self.defined.clone();
        let mut targets = Vec::new();
        let mut jumps = Vec::new();
        for _ in 0..arms {
            targets.push(self.here());
            self.defined = saved.clone();
            self.block(depth + 1);
            jumps.push(self.hole());
        }
        self.defined = saved;
        let join = self.push(op(
            Operation::Move,
            vec![self.one.clone()],
            self.one.clone(),
        ));
        self.code.insert(
            jt,
            Instr::Jumptable {
                index: idx,
                targets,
            },
        );
        for j in jumps {
            let one = self.one.clone();
            self.code
                .insert(j, op(Operation::Move, vec![one.clone()], one)(join));
        }
    }

    /// `sp < sp + k` for a `k` near the end of the frame, branched on.
    fn pointer_compare(&mut self) {
        let sp = self.sp.clone().unwrap();
        let k = self.stacksize as i64 + self.rng.gen_range(-4..=4);
        let kr = self.konst(k);
        let p = self.new_reg();
        self.push(op(Operation::AddPtr, vec![sp.clone(), kr], p.clone()));
        let c = self.new_reg();
        self.push(op(Operation::CmpLt, vec![sp, p], c.clone()));
        let branch = self.hole();
        let ifso = self.here();
        let v = self.new_reg();
        self.push(op(Operation::Const(7), vec![], v.clone()));
        let d = self.new_reg();
        self.push(|succ| Instr::ExtCall {
            name: "print_int".into(),
            args: vec![v],
            dst: d,
            succ,
        });
        let ifnot = self.here();
        self.code.insert(
            branch,
            Instr::Cond {
                cond: Cond::Eq,
                args: [c, self.one.clone()],
                ifso,
                ifnot,
            },
        );
    }

    fn call_args(&mut self, callee: &Sig) -> Vec<Reg> {
        let mut args = Vec::with_capacity(callee.arity);
        for i in 0..callee.arity {
            if i == 0 && callee.recursive {
                let k = self.rng.gen_range(0..=MAX_DEPTH_ARG);
                let r = self.new_reg();
                self.push(op(Operation::Const(k), vec![], r.clone()));
                args.push(r);
            } else {
                args.push(self.pick());
            }
        }
        args
    }

    /// Emits a call and returns its destination, fresh and kept out of
    /// the pool when `tail`.
    fn call(&mut self, tail: bool) -> Reg {
        let callee = self.callees.choose(self.rng).unwrap().clone();
        let args = self.call_args(&callee);
        let dst = if tail { self.new_reg() } else { self.dst() };
        let r = dst.clone();
        self.push(|succ| Instr::Call {
            callee: callee.name,
            args,
            dst,
            succ,
        });
        r
    }

    fn ret(&mut self) {
        let v = self.pick();
        self.push(|_| Instr::Return(Some(v)));
    }

    /// Ends the function, sometimes with a call in tail position.
    fn finish(&mut self) {
        if !self.callees.is_empty() && self.rng.gen_bool(0.4) {
            let r = self.call(true);
            self.push(|_| Instr::Return(Some(r)));
        } else {
            self.ret();
        }
    }
}

fn build(rng: &mut ChaCha8Rng, sig: &Sig, callees: &[Sig], budget: usize) -> Function {
    let params: Vec<Reg> = (0..sig.arity).map(|i| Reg::new(format!("p{i}"))).collect();
    let stacksize = if sig.recursive || rng.gen_bool(0.4) {
        0
    } else {
        8 * rng.gen_range(1..=4)
    };
    let mut b = Builder {
        rng,
        stacksize,
        code: BTreeMap::new(),
        next: 1,
        defined: params.clone(),
        protected: Vec::new(),
        fresh: 0,
        sp: None,
        one: Reg::new("one"),
        zero: Reg::new("zero"),
        callees,
        budget,
    };
    b.push(op(Operation::Const(1), vec![], b.one.clone()));
    b.push(op(Operation::Const(0), vec![], b.zero.clone()));
    b.defined.extend([b.one.clone(), b.zero.clone()]);
    b.protected.extend([b.one.clone(), b.zero.clone()]);
    if stacksize > 0 {
        let sp = Reg::new("sp");
        b.push(op(Operation::GetSp, vec![], sp.clone()));
        // Every slot starts defined so loads feed arithmetic safely.
        for off in (0..stacksize as i64).step_by(8) {
            let v = b.pick();
            let a = sp.clone();
            b.push(|succ| Instr::Store {
                addr: a,
                off,
                src: v,
                succ,
            });
        }
        b.sp = Some(sp);
    }
    if sig.recursive {
        let d = params[0].clone();
        b.protected.push(d.clone());
        let branch = b.hole();
        let saved = b.defined.clone();
        let base = b.here();
        b.block(1);
        b.ret();
        b.defined = saved;
        let rec = b.here();
        b.block(1);
        let d1 = b.new_reg();
        b.push(op(
            Operation::Sub,
            vec![d.clone(), b.one.clone()],
            d1.clone(),
        ));
        let mut args = vec![d1];
        for _ in 1..sig.arity {
            let a = b.pick();
            args.push(a);
        }
        let r = b.new_reg();
        let name = sig.name.clone();
        b.push(|succ| Instr::Call {
            callee: name,
            args,
            dst: r.clone(),
            succ,
        });
        b.push(|_| Instr::Return(Some(r)));
        b.code.insert(
            branch,
            Instr::Cond {
                cond: Cond::Lt,
                args: [d, b.one.clone()],
                ifso: base,
                ifnot: rec,
            },
        );
    } else {
        b.block(0);
        b.finish();
    }
    let mut f = Function::new(sig.name.clone(), params, stacksize, Node(1));
    f.code = b.code;
    f
}

/// Generates a well-formed, terminating program from `seed`. `budget`
/// bounds the statements per block and the number of functions.
pub fn gen_random_program(seed: u64, budget: usize) -> Program {
    let budget = budget.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nfuncs = rng.gen_range(2..=2 + budget / 4);
    let sigs: Vec<Sig> = (0..nfuncs)
        .map(|i| {
            let (name, recursive) = if i == 0 {
                ("main".to_string(), false)
            } else {
                // The first helper is the most likely to recurse.
                let p = if i == 1 { 0.7 } else { 0.35 };
                (format!("f{i}"), rng.gen_bool(p))
            };
            let arity = if i == 0 { 1 } else { rng.gen_range(1..=3) };
            Sig {
                name,
                arity,
                recursive,
            }
        })
        .collect();
    let mut p = Program::new("main");
    for (i, sig) in sigs.iter().enumerate() {
        let f = build(&mut rng, sig, &sigs[i + 1..], budget.min(6));
        p.add(f);
    }
    p
}
