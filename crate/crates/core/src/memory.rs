//! Block/offset memory with abstract byte cells.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::ir::Node;

/// Memory block identifier. Ids start at 1 and are never reused.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

/// Pointer-authentication key. Only key A exists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Key {
    A,
}

/// Payload of an authenticated pointer. Fields are private so that the only
/// way to build one is [`pac_encode`] and the only way to open one is
/// [`pac_decode`] with the right modifier.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Encoded {
    inner: Value,
    digest: Value,
    key: Key,
}

impl Encoded {
    pub fn digest(&self) -> &Value {
        &self.digest
    }

    pub fn key(&self) -> Key {
        self.key
    }

    /// Peek at the wrapped value. For relation checking only; programs have
    /// no operation that does this.
    pub fn inner(&self) -> &Value {
        &self.inner
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub enum Value {
    #[default]
    Undef,
    Int(i64),
    Ptr(BlockId, i64),
    Code(Arc<str>, Node),
    Enc(Arc<Encoded>),
}

impl Value {
    pub fn code(f: &str, n: Node) -> Value {
        Value::Code(Arc::from(f), n)
    }

    pub fn is_undef(&self) -> bool {
        matches!(self, Value::Undef)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Undef => write!(f, "undef"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Ptr(b, o) => write!(f, "ptr({b}, {o})"),
            Value::Code(g, n) => write!(f, "code({g}.{n})"),
            Value::Enc(e) => write!(f, "enc({:?}, {:?}, {:?})", e.inner, e.digest, e.key),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Sign `v` with key A under modifier `m`. Only code and data pointers can
/// be signed; anything else, or an undefined modifier, gives `Undef`.
pub fn pac_encode(v: &Value, m: &Value) -> Value {
    match (v, m) {
        (_, Value::Undef) => Value::Undef,
        (Value::Code(..) | Value::Ptr(..), _) => Value::Enc(Arc::new(Encoded {
            inner: v.clone(),
            digest: m.clone(),
            key: Key::A,
        })),
        _ => Value::Undef,
    }
}

/// Authenticate `v` against modifier `m`; failure gives `Undef`.
pub fn pac_decode(v: &Value, m: &Value) -> Value {
    match v {
        Value::Enc(e) if !m.is_undef() && e.key == Key::A && e.digest == *m => e.inner.clone(),
        _ => Value::Undef,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MemCell {
    UndefByte,
    ConcreteByte(u8),
    /// Byte `idx` of an 8-byte stored value.
    Fragment(Value, u8),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub size: u64,
    pub live: bool,
    cells: Arc<Vec<MemCell>>,
}

impl Block {
    pub fn cells(&self) -> &[MemCell] {
        &self.cells
    }
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum MemError {
    #[error("access to {0} at offset {1} is out of bounds")]
    OutOfBounds(BlockId, i64),
    #[error("access to {0} at offset {1} is not 8-byte aligned")]
    Misaligned(BlockId, i64),
    #[error("access to freed block {0}")]
    DeadBlock(BlockId),
    #[error("access to unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("free of {0}, which is not live")]
    DoubleFree(BlockId),
}

/// Finite map from block ids to blocks. Cell arrays are shared between
/// clones and copied on first write, so cloning a memory is cheap.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Memory {
    blocks: Vec<Block>,
    concrete_ints: bool,
}

impl Memory {
    pub fn new() -> Memory {
        Memory::default()
    }

    /// Memory that stores integers as concrete little-endian bytes.
    pub fn with_concrete_ints() -> Memory {
        Memory {
            blocks: Vec::new(),
            concrete_ints: true,
        }
    }

    pub fn next_block(&self) -> BlockId {
        BlockId(self.blocks.len() as u32 + 1)
    }

    pub fn alloc(&mut self, size: u64) -> BlockId {
        let b = self.next_block();
        self.blocks.push(Block {
            size,
            live: true,
            cells: Arc::new(vec![MemCell::UndefByte; size as usize]),
        });
        b
    }

    pub fn free(&mut self, b: BlockId) -> Result<(), MemError> {
        match self.block_mut(b) {
            Some(blk) if blk.live => {
                blk.live = false;
                blk.cells = Arc::new(Vec::new());
                Ok(())
            }
            _ => Err(MemError::DoubleFree(b)),
        }
    }

    pub fn block(&self, b: BlockId) -> Option<&Block> {
        (b.0 as usize)
            .checked_sub(1)
            .and_then(|i| self.blocks.get(i))
    }

    fn block_mut(&mut self, b: BlockId) -> Option<&mut Block> {
        (b.0 as usize)
            .checked_sub(1)
            .and_then(|i| self.blocks.get_mut(i))
    }

    pub fn is_live(&self, b: BlockId) -> bool {
        self.block(b).is_some_and(|blk| blk.live)
    }

    pub fn size(&self, b: BlockId) -> Option<u64> {
        self.block(b).map(|blk| blk.size)
    }

    /// All blocks ever allocated, dead ones included.
    pub fn blocks(&self) -> impl Iterator<Item = (BlockId, &Block)> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, blk)| (BlockId(i as u32 + 1), blk))
    }

    pub fn live_blocks(&self) -> impl Iterator<Item = (BlockId, &Block)> {
        self.blocks().filter(|(_, blk)| blk.live)
    }

    fn check(&self, b: BlockId, o: i64) -> Result<usize, MemError> {
        let blk = self.block(b).ok_or(MemError::UnknownBlock(b))?;
        if !blk.live {
            return Err(MemError::DeadBlock(b));
        }
        if o.rem_euclid(8) != 0 {
            return Err(MemError::Misaligned(b, o));
        }
        if o < 0 || o.checked_add(8).is_none_or(|end| end as u64 > blk.size) {
            return Err(MemError::OutOfBounds(b, o));
        }
        Ok(o as usize)
    }

    pub fn store64(&mut self, b: BlockId, o: i64, v: &Value) -> Result<(), MemError> {
        let start = self.check(b, o)?;
        let concrete = self.concrete_ints;
        let blk = self.block_mut(b).expect("checked");
        let cells = &mut Arc::make_mut(&mut blk.cells)[start..start + 8];
        match v {
            Value::Int(i) if concrete => {
                for (c, byte) in cells.iter_mut().zip(i.to_le_bytes()) {
                    *c = MemCell::ConcreteByte(byte);
                }
            }
            _ => {
                for (idx, c) in cells.iter_mut().enumerate() {
                    *c = MemCell::Fragment(v.clone(), idx as u8);
                }
            }
        }
        Ok(())
    }

    pub fn load64(&self, b: BlockId, o: i64) -> Result<Value, MemError> {
        let start = self.check(b, o)?;
        let cells = &self.block(b).expect("checked").cells[start..start + 8];
        Ok(decode_cells(cells))
    }
}

fn decode_cells(cells: &[MemCell]) -> Value {
    if let MemCell::Fragment(v, 0) = &cells[0] {
        let whole = cells
            .iter()
            .enumerate()
            .all(|(i, c)| matches!(c, MemCell::Fragment(w, j) if *j as usize == i && w == v));
        return if whole { v.clone() } else { Value::Undef };
    }
    let mut bytes = [0u8; 8];
    for (slot, c) in bytes.iter_mut().zip(cells) {
        match c {
            MemCell::ConcreteByte(x) => *slot = *x,
            _ => return Value::Undef,
        }
    }
    Value::Int(i64::from_le_bytes(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alloc_issues_monotone_ids() {
        let mut m = Memory::new();
        let a = m.alloc(0);
        let b = m.alloc(16);
        assert_eq!((a, b), (BlockId(1), BlockId(2)));
        assert_eq!(m.size(a), Some(0));
        assert_eq!(m.next_block(), BlockId(3));
    }

    #[test]
    fn fresh_block_reads_undef() {
        let mut m = Memory::new();
        let b = m.alloc(32);
        for o in (0..32).step_by(8) {
            assert_eq!(m.load64(b, o), Ok(Value::Undef));
        }
    }

    #[test]
    fn free_then_access_fails() {
        let mut m = Memory::new();
        let b = m.alloc(8);
        m.free(b).unwrap();
        assert_eq!(m.load64(b, 0), Err(MemError::DeadBlock(b)));
        assert_eq!(m.free(b), Err(MemError::DoubleFree(b)));
        assert_eq!(m.free(BlockId(9)), Err(MemError::DoubleFree(BlockId(9))));
    }

    #[test]
    fn free_leaves_other_blocks_alone() {
        let mut m = Memory::new();
        let a = m.alloc(8);
        let b = m.alloc(8);
        m.store64(a, 0, &Value::Int(5)).unwrap();
        m.free(b).unwrap();
        assert_eq!(m.load64(a, 0), Ok(Value::Int(5)));
    }

    #[test]
    fn bounds_and_alignment() {
        let mut m = Memory::new();
        let small = m.alloc(32);
        let big = m.alloc(40);
        assert_eq!(
            m.store64(small, 32, &Value::Int(1)),
            Err(MemError::OutOfBounds(small, 32))
        );
        assert_eq!(m.store64(big, 32, &Value::Int(1)), Ok(()));
        assert_eq!(m.load64(big, 4), Err(MemError::Misaligned(big, 4)));
        assert_eq!(m.load64(big, -8), Err(MemError::OutOfBounds(big, -8)));
        assert_eq!(
            m.load64(BlockId(7), 0),
            Err(MemError::UnknownBlock(BlockId(7)))
        );
    }

    #[test]
    fn read_after_write_for_every_kind() {
        let mut m = Memory::new();
        let b = m.alloc(24);
        let enc = pac_encode(&Value::code("f", Node(3)), &Value::Ptr(b, 0));
        for v in [
            Value::Ptr(b, 16),
            Value::code("main", Node(2)),
            enc,
            Value::Int(-3),
        ] {
            m.store64(b, 8, &v).unwrap();
            assert_eq!(m.load64(b, 8), Ok(v));
        }
    }

    #[test]
    fn concrete_ints_are_bytes() {
        let mut m = Memory::with_concrete_ints();
        let b = m.alloc(8);
        m.store64(b, 0, &Value::Int(0x0102)).unwrap();
        assert_eq!(m.block(b).unwrap().cells()[0], MemCell::ConcreteByte(2));
        assert_eq!(m.load64(b, 0), Ok(Value::Int(0x0102)));
        m.store64(b, 0, &Value::Ptr(b, 0)).unwrap();
        assert_eq!(m.load64(b, 0), Ok(Value::Ptr(b, 0)));
    }

    #[test]
    fn mixed_cells_read_undef() {
        let v = Value::Int(9);
        let mut cells: Vec<MemCell> = (0..8).map(|i| MemCell::Fragment(v.clone(), i)).collect();
        assert_eq!(decode_cells(&cells), v);
        cells[7] = MemCell::UndefByte;
        assert_eq!(decode_cells(&cells), Value::Undef);
        cells[7] = MemCell::Fragment(Value::Int(8), 7);
        assert_eq!(decode_cells(&cells), Value::Undef);
        cells.swap(0, 1);
        assert_eq!(decode_cells(&cells), Value::Undef);
        let bytes: Vec<MemCell> = (0..8).map(MemCell::ConcreteByte).collect();
        assert_eq!(decode_cells(&bytes), Value::Int(0x0706050403020100));
    }

    #[test]
    fn pac_round_trip_and_failures() {
        let c = Value::code("main", Node(4));
        let sp = Value::Ptr(BlockId(1), 0);
        let e = pac_encode(&c, &sp);
        assert_eq!(pac_decode(&e, &sp), c);
        assert_eq!(pac_decode(&e, &Value::Ptr(BlockId(2), 0)), Value::Undef);
        assert_eq!(pac_decode(&c, &sp), Value::Undef);
        assert_eq!(pac_encode(&Value::Undef, &sp), Value::Undef);
        assert_eq!(pac_encode(&c, &Value::Undef), Value::Undef);
        assert_eq!(pac_encode(&Value::Int(3), &sp), Value::Undef);
        assert_eq!(pac_encode(&e, &sp), Value::Undef);
    }
}
