//! Element types moved by the typed put/get, atomic, and reduction routines.

use std::fmt::Debug;

use crate::machine::Width;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElemType {
    I8,
    I16,
    I32,
    I64,
    F32,
    F64,
}

impl ElemType {
    pub const ALL: [ElemType; 6] = [ElemType::I8, ElemType::I16, ElemType::I32, ElemType::I64, ElemType::F32, ElemType::F64];

    pub fn size(self) -> usize {
        match self {
            ElemType::I8 => 1,
            ElemType::I16 => 2,
            ElemType::I32 | ElemType::F32 => 4,
            ElemType::I64 | ElemType::F64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, ElemType::F32 | ElemType::F64)
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemType::I8 => "i8",
            ElemType::I16 => "i16",
            ElemType::I32 => "i32",
            ElemType::I64 => "i64",
            ElemType::F32 => "f32",
            ElemType::F64 => "f64",
        }
    }
}

/// Reduction operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceKind {
    Sum,
    Prod,
    Min,
    Max,
    And,
    Or,
    Xor,
}

impl ReduceKind {
    pub const ALL: [ReduceKind; 7] =
        [ReduceKind::Sum, ReduceKind::Prod, ReduceKind::Min, ReduceKind::Max, ReduceKind::And, ReduceKind::Or, ReduceKind::Xor];

    pub fn is_bitwise(self) -> bool {
        matches!(self, ReduceKind::And | ReduceKind::Or | ReduceKind::Xor)
    }

    pub fn applies_to(self, ty: ElemType) -> bool {
        !self.is_bitwise() || ty.is_integer()
    }
}

pub trait Elem: Copy + Default + PartialEq + Debug + 'static {
    const TYPE: ElemType;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Combines two values; `None` when the operator does not apply to this type.
    fn combine(kind: ReduceKind, a: Self, b: Self) -> Option<Self>;
}

/// Integers usable as `wait_until` operands.
pub trait IntElem: Elem {
    fn to_i64(self) -> i64;
}

/// Integers usable with the remote atomics.
pub trait AtomicElem: IntElem {
    const WIDTH: Width;
    fn to_bits(self) -> u64;
    fn from_bits(bits: u64) -> Self;
}

macro_rules! int_elem {
    ($t:ty, $ty:ident) => {
        impl Elem for $t {
            const TYPE: ElemType = ElemType::$ty;

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes[..std::mem::size_of::<$t>()].try_into().unwrap())
            }

            fn combine(kind: ReduceKind, a: Self, b: Self) -> Option<Self> {
                Some(match kind {
                    ReduceKind::Sum => a.wrapping_add(b),
                    ReduceKind::Prod => a.wrapping_mul(b),
                    ReduceKind::Min => a.min(b),
                    ReduceKind::Max => a.max(b),
                    ReduceKind::And => a & b,
                    ReduceKind::Or => a | b,
                    ReduceKind::Xor => a ^ b,
                })
            }
        }

        impl IntElem for $t {
            fn to_i64(self) -> i64 {
                self as i64
            }
        }
    };
}

macro_rules! float_elem {
    ($t:ty, $ty:ident) => {
        impl Elem for $t {
            const TYPE: ElemType = ElemType::$ty;

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes[..std::mem::size_of::<$t>()].try_into().unwrap())
            }

            fn combine(kind: ReduceKind, a: Self, b: Self) -> Option<Self> {
                match kind {
                    ReduceKind::Sum => Some(a + b),
                    ReduceKind::Prod => Some(a * b),
                    ReduceKind::Min => Some(a.min(b)),
                    ReduceKind::Max => Some(a.max(b)),
                    _ => None,
                }
            }
        }
    };
}

int_elem!(i8, I8);
int_elem!(i16, I16);
int_elem!(i32, I32);
int_elem!(i64, I64);
float_elem!(f32, F32);
float_elem!(f64, F64);

impl AtomicElem for i32 {
    const WIDTH: Width = Width::W32;

    fn to_bits(self) -> u64 {
        self as u32 as u64
    }

    fn from_bits(bits: u64) -> Self {
        bits as u32 as i32
    }
}

impl AtomicElem for i64 {
    const WIDTH: Width = Width::W64;

    fn to_bits(self) -> u64 {
        self as u64
    }

    fn from_bits(bits: u64) -> Self {
        bits as i64
    }
}

pub fn encode_slice<T: Elem>(vals: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(vals.len() * T::TYPE.size());
    for v in vals {
        v.write_le(&mut out);
    }
    out
}

pub fn decode_slice<T: Elem>(bytes: &[u8]) -> Vec<T> {
    bytes.chunks_exact(T::TYPE.size()).map(T::read_le).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_codec() {
        let v = [1.5f32, -2.0, 0.25];
        assert_eq!(decode_slice::<f32>(&encode_slice(&v)), v);
        let w = [i16::MIN, -1, 7];
        assert_eq!(decode_slice::<i16>(&encode_slice(&w)), w);
    }

    #[test]
    fn combine_rules() {
        assert_eq!(i8::combine(ReduceKind::Sum, 127, 1), Some(-128));
        assert_eq!(i32::combine(ReduceKind::Xor, 6, 3), Some(5));
        assert_eq!(f64::combine(ReduceKind::And, 1.0, 2.0), None);
        assert_eq!(f32::combine(ReduceKind::Max, 1.0, 2.0), Some(2.0));
        assert!(!ReduceKind::Or.applies_to(ElemType::F64));
        assert!(ReduceKind::Min.applies_to(ElemType::F64));
        assert_eq!(i32::from_bits((-3i32).to_bits()), -3);
    }
}
