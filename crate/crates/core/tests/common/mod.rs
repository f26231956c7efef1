#![allow(dead_code)]

use proptest::prelude::*;

use blocklab::ir::Node;
use blocklab::memory::{pac_encode, BlockId, Memory, Value};

pub const FUNCS: [&str; 3] = ["main", "f", "g"];

pub fn int() -> impl Strategy<Value = i64> {
    prop_oneof![-4i64..4, any::<i64>(), Just(i64::MIN), Just(i64::MAX),]
}

pub fn code() -> impl Strategy<Value = Value> {
    (0..FUNCS.len(), 1u32..6).prop_map(|(f, n)| Value::code(FUNCS[f], Node(n)))
}

pub fn ptr(blocks: u32) -> impl Strategy<Value = Value> {
    (1..=blocks, -1i64..7).prop_map(|(b, k)| Value::Ptr(BlockId(b), k * 8))
}

pub fn pointer(blocks: u32) -> impl Strategy<Value = Value> {
    prop_oneof![code(), ptr(blocks)]
}

/// Defined values that are not authenticated pointers.
pub fn plain(blocks: u32) -> impl Strategy<Value = Value> {
    prop_oneof![int().prop_map(Value::Int), ptr(blocks), code()]
}

pub fn value(blocks: u32) -> impl Strategy<Value = Value> {
    let enc = (pointer(blocks), plain(blocks)).prop_map(|(p, m)| pac_encode(&p, &m));
    prop_oneof![
        1 => Just(Value::Undef),
        4 => plain(blocks),
        1 => enc,
    ]
}

/// Blocks of random (8-aligned) sizes, some freed, with random contents.
#[derive(Clone, Debug)]
pub struct MemPlan {
    pub sizes: Vec<u64>,
    pub stores: Vec<(usize, i64, Value)>,
    pub freed: Vec<bool>,
}

pub const MAX_BLOCKS: u32 = 4;

pub fn mem_plan() -> impl Strategy<Value = MemPlan> {
    (1usize..=MAX_BLOCKS as usize).prop_flat_map(|n| {
        (
            proptest::collection::vec((0u64..6).prop_map(|k| k * 8), n),
            proptest::collection::vec((0..n, 0i64..6, value(MAX_BLOCKS)), 0..12),
            proptest::collection::vec(proptest::bool::weighted(0.15), n),
        )
            .prop_map(|(sizes, stores, freed)| MemPlan {
                sizes,
                stores: stores.into_iter().map(|(b, k, v)| (b, k * 8, v)).collect(),
                freed,
            })
    })
}

impl MemPlan {
    pub fn build(&self) -> Memory {
        let mut m = Memory::new();
        let ids: Vec<BlockId> = self.sizes.iter().map(|s| m.alloc(*s)).collect();
        for (b, o, v) in &self.stores {
            let _ = m.store64(ids[*b], *o, v);
        }
        for (b, f) in ids.iter().zip(&self.freed) {
            if *f {
                m.free(*b).unwrap();
            }
        }
        m
    }
}
