use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the numeric kernels are generic over.
///
/// Implemented for `f32` and `f64`. Reductions (dot products, sums, means)
/// accumulate in `f64` regardless of the storage type and round once at the
/// end.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn from_f64_lossy(v: f64) -> Self;

    /// Widening conversion to `f64`.
    fn widen(self) -> f64;

    /// Conversion from the 32-bit on-disk representation.
    fn from_f32_lossy(v: f32) -> Self;

    /// Narrowing conversion to the 32-bit on-disk representation.
    fn narrow(self) -> f32;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32_lossy(v: f32) -> Self {
        v
    }
    #[inline]
    fn narrow(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn widen(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32_lossy(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn narrow(self) -> f32 {
        self as f32
    }
}

/// Encodes values as raw little-endian 32-bit reals.
pub fn encode_f32_le<T: Scalar>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.narrow().to_le_bytes());
    }
    out
}

/// Decodes raw little-endian 32-bit reals. Trailing bytes that do not form a
/// full value are ignored; callers check lengths first.
pub fn decode_f32_le<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes
        .chunks_exact(4)
        .map(|c| T::from_f32_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect()
}
