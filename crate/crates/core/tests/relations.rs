mod common;

use proptest::prelude::*;

use blocklab::ir::Operation;
use blocklab::memory::{BlockId, Memory, Value};
use blocklab::relations::{extends, inject_match, inject_value, lessdef, mem_inject, InjectionMap};
use blocklab::semantics::{eval_op, OpCtx};

use common::{mem_plan, value, MemPlan, MAX_BLOCKS};

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(10_000)
}

/// A plan whose memory extends `base`'s: blocks may grow, slots that are
/// undefined (or new) may be filled, and fewer blocks may be freed.
#[derive(Clone, Debug)]
struct Refinement {
    grow: Vec<u64>,
    fills: Vec<(usize, i64, Value)>,
    keep: Vec<bool>,
}

fn refinement() -> impl Strategy<Value = Refinement> {
    let n = MAX_BLOCKS as usize;
    (
        proptest::collection::vec((0u64..3).prop_map(|k| k * 8), n),
        proptest::collection::vec((0..n, 0i64..8, value(MAX_BLOCKS)), 0..10),
        proptest::collection::vec(proptest::bool::weighted(0.3), n),
    )
        .prop_map(|(grow, fills, keep)| Refinement {
            grow,
            fills: fills.into_iter().map(|(b, k, v)| (b, k * 8, v)).collect(),
            keep,
        })
}

fn refine(plan: &MemPlan, r: &Refinement) -> MemPlan {
    let base = plan.build();
    let n = plan.sizes.len();
    let mut out = plan.clone();
    for (s, g) in out.sizes.iter_mut().zip(&r.grow) {
        *s += g;
    }
    for (b, o, v) in &r.fills {
        if *b >= n {
            continue;
        }
        let undefined = base
            .load64(BlockId(*b as u32 + 1), *o)
            .map_or(true, |w| w.is_undef());
        if undefined {
            out.stores.push((*b, *o, v.clone()));
        }
    }
    for (f, k) in out.freed.iter_mut().zip(&r.keep) {
        *f &= !k;
    }
    out
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn lessdef_is_a_partial_order(a in value(MAX_BLOCKS), b in value(MAX_BLOCKS), c in value(MAX_BLOCKS), pick in 0u8..3) {
        // Make the premises of antisymmetry and transitivity hold often.
        let b = match pick { 0 => a.clone(), 1 => Value::Undef, _ => b };
        prop_assert!(lessdef(&a, &a));
        prop_assert!(lessdef(&Value::Undef, &a));
        if lessdef(&a, &b) && lessdef(&b, &a) {
            prop_assert_eq!(&a, &b);
        }
        if lessdef(&a, &b) && lessdef(&b, &c) {
            prop_assert!(lessdef(&a, &c));
        }
        if !a.is_undef() && a != b {
            prop_assert!(!lessdef(&a, &b));
        }
    }

    #[test]
    fn extends_is_reflexive_and_transitive(p in mem_plan(), r1 in refinement(), r2 in refinement(), other in mem_plan()) {
        let m1 = p.build();
        prop_assert!(extends(&m1, &m1));
        let p2 = refine(&p, &r1);
        let m2 = p2.build();
        prop_assert!(extends(&m1, &m2));
        let m3 = refine(&p2, &r2).build();
        prop_assert!(extends(&m2, &m3));
        prop_assert!(extends(&m1, &m3));
        let mo = other.build();
        if extends(&m1, &m2) && extends(&m2, &mo) {
            prop_assert!(extends(&m1, &mo));
        }
        if extends(&mo, &m1) && extends(&m1, &m2) {
            prop_assert!(extends(&mo, &m2));
        }
    }
}

/// A source memory, a target memory laid out under `j`, and the map.
#[derive(Debug)]
struct Injected {
    j: InjectionMap,
    m1: Memory,
    m2: Memory,
}

fn layout(plan: &MemPlan, shared: bool, deltas: &[i64], junk: &[Value]) -> Injected {
    let mut m1 = Memory::new();
    let ids: Vec<BlockId> = plan.sizes.iter().map(|s| m1.alloc(*s)).collect();
    let mut j = InjectionMap::new();
    let mut m2 = Memory::new();
    if shared {
        let mut at = 0;
        let mut slots = Vec::new();
        for (s, d) in plan.sizes.iter().zip(deltas) {
            slots.push(at + d);
            at += d + *s as i64;
        }
        let t = m2.alloc(at as u64 + 8);
        for (b, o) in ids.iter().zip(slots) {
            j.insert(*b, t, o);
        }
    } else {
        for ((b, s), d) in ids.iter().zip(&plan.sizes).zip(deltas) {
            let t = m2.alloc(*s + *d as u64 + 8);
            j.insert(*b, t, *d);
        }
    }
    // Junk everywhere in the target first, so gaps hold arbitrary values.
    for (t, blk) in m2.clone().blocks() {
        for (i, o) in (0..blk.size as i64).step_by(8).enumerate() {
            m2.store64(t, o, &junk[i % junk.len()]).unwrap();
        }
    }
    for (b, o, v) in &plan.stores {
        let v = sanitize(&j, v);
        if m1.store64(ids[*b], *o, &v).is_ok() {
            let (t, d) = j.get(ids[*b]).unwrap();
            m2.store64(t, o + d, &inject_value(&j, &v).unwrap())
                .unwrap();
        }
    }
    // Slots never written are undefined in m1, so their junk image is fine.
    for (b, f) in ids.iter().zip(&plan.freed) {
        if *f {
            m1.free(*b).unwrap();
        }
    }
    Injected { j, m1, m2 }
}

/// Values that point into unmapped blocks have no image; use Undef instead.
fn sanitize(j: &InjectionMap, v: &Value) -> Value {
    if inject_value(j, v).is_some() {
        v.clone()
    } else {
        Value::Undef
    }
}

#[derive(Clone, Debug)]
enum Access {
    Store(usize, i64, Value, Value),
    Load(usize, i64),
}

fn access() -> impl Strategy<Value = Access> {
    let n = MAX_BLOCKS as usize;
    prop_oneof![
        (0..n, -1i64..7, value(MAX_BLOCKS), value(MAX_BLOCKS))
            .prop_map(|(b, k, v, w)| Access::Store(b, k * 8, v, w)),
        (0..n, -1i64..7).prop_map(|(b, k)| Access::Load(b, k * 8)),
    ]
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn stores_and_loads_commute_with_injection(
        p in mem_plan(),
        shared in any::<bool>(),
        deltas in proptest::collection::vec((0i64..3).prop_map(|k| k * 8), MAX_BLOCKS as usize),
        junk in proptest::collection::vec(value(MAX_BLOCKS), 1..4),
        ops in proptest::collection::vec(access(), 1..8),
    ) {
        let Injected { j, mut m1, mut m2 } = layout(&p, shared, &deltas, &junk);
        prop_assert!(j.is_wellformed(&m1));
        prop_assert!(mem_inject(&j, &m1, &m2));
        for op in ops {
            match op {
                Access::Store(i, o, v, other) => {
                    if i >= p.sizes.len() {
                        continue;
                    }
                    let b = BlockId(i as u32 + 1);
                    let v1 = sanitize(&j, &v);
                    // An undefined source value may be matched by anything.
                    let v2 = if v1.is_undef() { other } else { inject_value(&j, &v1).unwrap() };
                    prop_assert!(inject_match(&j, &v1, &v2));
                    if m1.store64(b, o, &v1).is_ok() {
                        let (t, d) = j.get(b).unwrap();
                        prop_assert!(m2.store64(t, o + d, &v2).is_ok());
                        prop_assert!(mem_inject(&j, &m1, &m2));
                    }
                }
                Access::Load(i, o) => {
                    let b = BlockId(i as u32 + 1);
                    if let (Ok(u1), Some((t, d))) = (m1.load64(b, o), j.get(b)) {
                        let u2 = m2.load64(t, o + d);
                        prop_assert!(u2.is_ok());
                        prop_assert!(inject_match(&j, &u1, &u2.unwrap()));
                    }
                }
            }
        }
    }
}

const OPS: [Operation; 11] = [
    Operation::Move,
    Operation::Add,
    Operation::Sub,
    Operation::Mul,
    Operation::DivStrict,
    Operation::DivTotal,
    Operation::AddPtr,
    Operation::CmpEq,
    Operation::CmpLt,
    Operation::PacEncode,
    Operation::PacDecode,
];

proptest! {
    #![proptest_config(cfg())]

    /// Making arguments more defined, and memory more extended, can only
    /// make the result more defined.
    #[test]
    fn eval_op_is_monotone(
        op in 0..OPS.len(),
        defined in proptest::collection::vec(value(MAX_BLOCKS), 2),
        erase in proptest::collection::vec(proptest::bool::weighted(0.3), 2),
        p in mem_plan(),
        r in refinement(),
    ) {
        let op = &OPS[op];
        let hi: Vec<Value> = defined[..op.arity()].to_vec();
        let lo: Vec<Value> = hi
            .iter()
            .zip(&erase)
            .map(|(v, e)| if *e { Value::Undef } else { v.clone() })
            .collect();
        let m = p.build();
        let m_ext = refine(&p, &r).build();
        let ctx = OpCtx {
            canary: Value::Int(0x5eed),
            sp: Value::Ptr(BlockId(1), 0),
            ra: Value::Undef,
        };
        let a = eval_op(op, &lo, &ctx, &m);
        let b = eval_op(op, &hi, &ctx, &m_ext);
        prop_assert!(lessdef(&a, &b), "{op:?} {lo:?} -> {a:?}, {hi:?} -> {b:?}");
    }
}
