//! Relations between values and memories of an original and a transformed
//! execution: definedness order, memory extension and memory injection.

use std::collections::BTreeMap;

use crate::ir::Program;
use crate::memory::{BlockId, Memory, Value};

pub fn align8(n: u64) -> u64 {
    n.div_ceil(8) * 8
}

/// `v1` is less defined than or equal to `v2`.
pub fn lessdef(v1: &Value, v2: &Value) -> bool {
    v1.is_undef() || v1 == v2
}

/// Every live block of `m1` with positive size is live in `m2`, at least as
/// large, with contents at least as defined at every aligned offset.
/// Zero-size blocks are exempt.
pub fn extends(m1: &Memory, m2: &Memory) -> bool {
    m1.live_blocks()
        .filter(|(_, blk)| blk.size > 0)
        .all(|(b, blk)| {
            match m2.block(b) {
                Some(other) if other.live && other.size >= blk.size => {}
                _ => return false,
            }
            (0..blk.size as i64)
                .step_by(8)
                .all(|o| match (m1.load64(b, o), m2.load64(b, o)) {
                    (Ok(v1), Ok(v2)) => lessdef(&v1, &v2),
                    (Err(_), Err(_)) => true,
                    (Err(_), Ok(_)) => true,
                    (Ok(_), Err(_)) => false,
                })
        })
}

/// Partial map from source blocks to (target block, delta).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InjectionMap {
    map: BTreeMap<BlockId, (BlockId, i64)>,
}

impl InjectionMap {
    pub fn new() -> InjectionMap {
        InjectionMap::default()
    }

    pub fn get(&self, b: BlockId) -> Option<(BlockId, i64)> {
        self.map.get(&b).copied()
    }

    pub fn insert(&mut self, from: BlockId, to: BlockId, delta: i64) {
        self.map.insert(from, (to, delta));
    }

    pub fn remove(&mut self, b: BlockId) -> Option<(BlockId, i64)> {
        self.map.remove(&b)
    }

    /// Drop every source block that maps into `target`.
    pub fn unmap_target(&mut self, target: BlockId) {
        self.map.retain(|_, (t, _)| *t != target);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockId, BlockId, i64)> + '_ {
        self.map.iter().map(|(&a, &(b, d))| (a, b, d))
    }

    /// Deltas are multiples of 8 and images of live source blocks do not
    /// overlap within a target block.
    pub fn is_wellformed(&self, m1: &Memory) -> bool {
        let mut ranges: BTreeMap<BlockId, Vec<(i64, i64)>> = BTreeMap::new();
        for (b1, b2, d) in self.iter() {
            if d.rem_euclid(8) != 0 {
                return false;
            }
            if !m1.is_live(b1) {
                continue;
            }
            let size = m1.size(b1).unwrap_or(0) as i64;
            if size > 0 {
                ranges.entry(b2).or_default().push((d, d + size));
            }
        }
        ranges.values_mut().all(|rs| {
            rs.sort();
            rs.windows(2).all(|w| w[0].1 <= w[1].0)
        })
    }
}

/// Image of `v` under `j`, or `None` when `v` points into an unmapped block.
pub fn inject_value(j: &InjectionMap, v: &Value) -> Option<Value> {
    match v {
        Value::Undef | Value::Int(_) | Value::Code(..) => Some(v.clone()),
        Value::Ptr(b, o) => j.get(*b).map(|(b2, d)| Value::Ptr(b2, o + d)),
        Value::Enc(e) => match inject_value(j, e.inner()) {
            Some(w) if &w == e.inner() => Some(v.clone()),
            _ => None,
        },
    }
}

pub fn inject_match(j: &InjectionMap, v1: &Value, v2: &Value) -> bool {
    v1.is_undef() || inject_value(j, v1).as_ref() == Some(v2)
}

/// Every live mapped block of `m1` sits inside a live block of `m2` with
/// pointwise injected contents.
pub fn mem_inject(j: &InjectionMap, m1: &Memory, m2: &Memory) -> bool {
    m1.live_blocks().all(|(b1, blk)| {
        let Some((b2, d)) = j.get(b1) else {
            return true;
        };
        let Some(target) = m2.block(b2).filter(|t| t.live) else {
            return false;
        };
        if d < 0 || d + blk.size as i64 > target.size as i64 {
            return false;
        }
        (0..blk.size as i64)
            .step_by(8)
            .all(|o| match (m1.load64(b1, o), m2.load64(b2, o + d)) {
                (Ok(v1), Ok(v2)) => inject_match(j, &v1, &v2),
                (Ok(v1), Err(_)) => v1.is_undef(),
                (Err(_), _) => true,
            })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CanaryEntry {
    pub protected: bool,
    pub canary_offset: u64,
    pub new_stacksize: u64,
}

/// Per-function canary placement.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CanarySpec {
    pub functions: BTreeMap<String, CanaryEntry>,
}

impl CanarySpec {
    /// Placement implied by an untransformed program: a function is
    /// protected when it has a stack frame, or always with `all`.
    pub fn derive(p: &Program, all: bool) -> CanarySpec {
        let functions = p
            .functions
            .values()
            .map(|f| {
                let protected = all || f.stacksize > 0;
                let off = align8(f.stacksize);
                let entry = if protected {
                    CanaryEntry {
                        protected,
                        canary_offset: off,
                        new_stacksize: off + 8,
                    }
                } else {
                    CanaryEntry {
                        protected,
                        canary_offset: 0,
                        new_stacksize: f.stacksize,
                    }
                };
                (f.name.clone(), entry)
            })
            .collect();
        CanarySpec { functions }
    }

    pub fn get(&self, f: &str) -> Option<&CanaryEntry> {
        self.functions.get(f).filter(|e| e.protected)
    }
}

/// Per-function offset of the saved return-address slot.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RaSlots {
    pub offsets: BTreeMap<String, u64>,
}

impl RaSlots {
    /// Slots implied by an unlowered program: every function that calls
    /// something gets one just above its frame.
    pub fn derive(p: &Program) -> RaSlots {
        let offsets = p
            .functions
            .values()
            .filter(|f| f.calls_anything())
            .map(|f| (f.name.clone(), align8(f.stacksize)))
            .collect();
        RaSlots { offsets }
    }

    pub fn get(&self, f: &str) -> Option<u64> {
        self.offsets.get(f).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Node;
    use crate::memory::pac_encode;

    #[test]
    fn lessdef_examples() {
        assert!(lessdef(&Value::Undef, &Value::Int(7)));
        assert!(lessdef(&Value::Int(7), &Value::Int(7)));
        assert!(!lessdef(&Value::Int(7), &Value::Int(8)));
        assert!(!lessdef(&Value::Int(7), &Value::Undef));
    }

    #[test]
    fn extension_of_grown_frame() {
        let mut m1 = Memory::new();
        let mut m2 = Memory::new();
        let a = m1.alloc(32);
        m2.alloc(40);
        m1.store64(a, 8, &Value::Int(3)).unwrap();
        m2.store64(a, 8, &Value::Int(3)).unwrap();
        m2.store64(a, 32, &Value::Int(99)).unwrap();
        assert!(extends(&m1, &m1));
        assert!(extends(&m1, &m2));
        assert!(!extends(&m2, &m1));
        m2.store64(a, 8, &Value::Int(4)).unwrap();
        assert!(!extends(&m1, &m2));
    }

    #[test]
    fn extension_needs_positive_blocks_only() {
        let mut m1 = Memory::new();
        m1.alloc(0);
        let b = m1.alloc(8);
        let mut m2 = Memory::new();
        let z = m2.alloc(0);
        m2.alloc(8);
        m2.free(z).unwrap();
        assert!(extends(&m1, &m2));
        m2.free(b).unwrap();
        assert!(!extends(&m1, &m2));
    }

    #[test]
    fn injection_on_values() {
        let mut j = InjectionMap::new();
        j.insert(BlockId(1), BlockId(5), 16);
        assert_eq!(
            inject_value(&j, &Value::Ptr(BlockId(1), 8)),
            Some(Value::Ptr(BlockId(5), 24))
        );
        assert_eq!(inject_value(&j, &Value::Int(42)), Some(Value::Int(42)));
        assert_eq!(inject_value(&j, &Value::Ptr(BlockId(2), 0)), None);
        assert!(inject_match(&j, &Value::Undef, &Value::Int(3)));
        let mut k = InjectionMap::new();
        k.insert(BlockId(1), BlockId(5), 0);
        assert!(inject_match(
            &k,
            &Value::Ptr(BlockId(1), 0),
            &Value::Ptr(BlockId(5), 0)
        ));
        assert!(!inject_match(
            &InjectionMap::new(),
            &Value::Ptr(BlockId(1), 0),
            &Value::Ptr(BlockId(1), 0)
        ));
    }

    #[test]
    fn encoded_values_inject_only_when_fixed() {
        let code = Value::code("main", Node(2));
        let e = pac_encode(&code, &Value::Ptr(BlockId(1), 0));
        assert_eq!(inject_value(&InjectionMap::new(), &e), Some(e.clone()));
        let p = pac_encode(&Value::Ptr(BlockId(1), 0), &Value::Int(0));
        let mut j = InjectionMap::new();
        j.insert(BlockId(1), BlockId(2), 0);
        assert_eq!(inject_value(&j, &p), None);
    }

    #[test]
    fn mem_inject_examples() {
        let mut m1 = Memory::new();
        let a = m1.alloc(16);
        m1.store64(a, 0, &Value::Ptr(a, 8)).unwrap();
        let mut id = InjectionMap::new();
        id.insert(a, a, 0);
        assert!(mem_inject(&id, &m1, &m1));

        let mut m2 = Memory::new();
        let t = m2.alloc(16);
        m2.store64(t, 0, &Value::Ptr(t, 8)).unwrap();
        m1.free(a).unwrap();
        let fresh = m1.alloc(16);
        m1.store64(fresh, 0, &Value::Ptr(fresh, 8)).unwrap();
        let mut j = InjectionMap::new();
        j.insert(fresh, t, 0);
        assert!(mem_inject(&j, &m1, &m2));

        let mut far = InjectionMap::new();
        far.insert(fresh, t, 8);
        assert!(!mem_inject(&far, &m1, &m2));
    }

    #[test]
    fn injection_wellformedness() {
        let mut m = Memory::new();
        let a = m.alloc(16);
        let b = m.alloc(16);
        let mut j = InjectionMap::new();
        j.insert(a, BlockId(9), 0);
        j.insert(b, BlockId(9), 16);
        assert!(j.is_wellformed(&m));
        j.insert(b, BlockId(9), 8);
        assert!(!j.is_wellformed(&m));
        j.insert(b, BlockId(9), 20);
        assert!(!j.is_wellformed(&m));
    }

    #[test]
    fn canary_spec_placement() {
        let p = crate::ir::parse_program(
            "function main() stacksize 0 { 1: x = call g() goto 2; 2: return x }
             function g() stacksize 24 { 1: return }",
        )
        .unwrap();
        let s = CanarySpec::derive(&p, false);
        assert!(s.get("main").is_none());
        assert_eq!(
            s.get("g"),
            Some(&CanaryEntry {
                protected: true,
                canary_offset: 24,
                new_stacksize: 32
            })
        );
        assert!(CanarySpec::derive(&p, true).get("main").is_some());
        assert_eq!(RaSlots::derive(&p).offsets.len(), 1);
    }
}
