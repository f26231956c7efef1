use crate::ir::Operation;
use crate::memory::{pac_decode, pac_encode, BlockId, Memory, Value};

/// Values an operation may read besides its arguments.
#[derive(Clone, Debug)]
pub struct OpCtx {
    pub canary: Value,
    pub sp: Value,
    pub ra: Value,
}

fn weakly_valid(m: &Memory, b: BlockId, o: i64) -> bool {
    m.block(b)
        .is_some_and(|blk| blk.live && o >= 0 && o as u64 <= blk.size)
}

fn int2(args: &[Value], f: impl Fn(i64, i64) -> Option<i64>) -> Value {
    match args {
        [Value::Int(a), Value::Int(b)] => f(*a, *b).map_or(Value::Undef, Value::Int),
        _ => Value::Undef,
    }
}

pub(crate) fn cmp_eq(a: &Value, b: &Value, m: &Memory) -> Value {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Value::Int((x == y) as i64),
        (Value::Ptr(b1, o1), Value::Ptr(b2, o2)) if b1 == b2 => Value::Int((o1 == o2) as i64),
        (Value::Ptr(b1, o1), Value::Ptr(b2, o2)) => {
            if weakly_valid(m, *b1, *o1) && weakly_valid(m, *b2, *o2) {
                Value::Int(0)
            } else {
                Value::Undef
            }
        }
        // A valid pointer is never null.
        (Value::Ptr(b, o), Value::Int(0)) | (Value::Int(0), Value::Ptr(b, o)) => {
            if weakly_valid(m, *b, *o) {
                Value::Int(0)
            } else {
                Value::Undef
            }
        }
        // Code addresses are distinct from each other's nodes and from
        // every integer.
        (Value::Code(f, n), Value::Code(g, k)) => Value::Int((f == g && n == k) as i64),
        (Value::Code(..), Value::Int(_)) | (Value::Int(_), Value::Code(..)) => Value::Int(0),
        _ => Value::Undef,
    }
}

pub(crate) fn cmp_lt(a: &Value, b: &Value, m: &Memory) -> Value {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Value::Int((x < y) as i64),
        (Value::Ptr(b1, o1), Value::Ptr(b2, o2))
            if b1 == b2 && weakly_valid(m, *b1, *o1) && weakly_valid(m, *b2, *o2) =>
        {
            Value::Int((o1 < o2) as i64)
        }
        _ => Value::Undef,
    }
}

fn quotient(a: i64, b: i64) -> Option<i64> {
    a.checked_div(b)
}

/// Total evaluation of an operation. Strict in `Undef`; ill-typed
/// arguments give `Undef`. Whether a strict division gets stuck is decided
/// by the caller.
pub fn eval_op(op: &Operation, args: &[Value], ctx: &OpCtx, m: &Memory) -> Value {
    match op {
        Operation::Const(k) => Value::Int(*k),
        Operation::Move => args[0].clone(),
        Operation::Add => int2(args, |a, b| Some(a.wrapping_add(b))),
        Operation::Sub => int2(args, |a, b| Some(a.wrapping_sub(b))),
        Operation::Mul => int2(args, |a, b| Some(a.wrapping_mul(b))),
        Operation::DivStrict | Operation::DivTotal => int2(args, quotient),
        Operation::AddPtr => match args {
            [Value::Ptr(b, o), Value::Int(k)] => Value::Ptr(*b, o.wrapping_add(*k)),
            _ => Value::Undef,
        },
        Operation::CmpEq => cmp_eq(&args[0], &args[1], m),
        Operation::CmpLt => cmp_lt(&args[0], &args[1], m),
        Operation::GetCanary => ctx.canary.clone(),
        Operation::GetRa => ctx.ra.clone(),
        Operation::GetSp => ctx.sp.clone(),
        Operation::CodeAddr(f, n) => Value::code(f, *n),
        Operation::PacEncode => pac_encode(&args[0], &args[1]),
        Operation::PacDecode => pac_decode(&args[0], &args[1]),
    }
}

/// True when a strict division with these arguments has no defined result.
pub(crate) fn div_strict_fails(args: &[Value]) -> bool {
    match args {
        [Value::Int(a), Value::Int(b)] => quotient(*a, *b).is_none(),
        [a, b] => a.is_undef() || b.is_undef(),
        _ => true,
    }
}
