// SPDX-License-Identifier: MIT OR Apache-2.0

//! Floating point scalar abstraction shared by every numeric module.
//!
//! Vectors, networks and corpora are generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. Reductions (dot products, norms, loss
//! sums) always accumulate in `f64` regardless of the storage type.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Storage scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Width in bits, as recorded in file headers.
    const BITS: u32;

    /// Width in bytes.
    const BYTES: usize = (Self::BITS / 8) as usize;

    /// Lossy conversion from `f64` (rounds to nearest for `f32`).
    fn of(x: f64) -> Self;

    /// Widening conversion to `f64`.
    fn wide(self) -> f64;

    /// Append the little-endian encoding to `out`.
    fn put_le(self, out: &mut Vec<u8>);

    /// Decode from exactly [`Self::BYTES`] little-endian bytes.
    fn get_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn wide(self) -> f64 {
        f64::from(self)
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(buf)
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn wide(self) -> f64 {
        self
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(buf)
    }
}

/// Bitwise equality of two slices (distinguishes `0.0` from `-0.0`).
pub fn bits_equal<T: Scalar>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.wide().to_bits() == y.wide().to_bits())
}

/// Convert a slice between scalar types.
pub fn cast_vec<S: Scalar, T: Scalar>(xs: &[S]) -> Vec<T> {
    xs.iter().map(|&x| T::of(x.wide())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn le_round_trip() {
        let mut buf = Vec::new();
        1.25f32.put_le(&mut buf);
        (-3.5f64).put_le(&mut buf);
        assert_eq!(buf.len(), 12);
        assert_eq!(f32::get_le(&buf[..4]), 1.25);
        assert_eq!(f64::get_le(&buf[4..]), -3.5);
    }

    #[test]
    fn widths() {
        assert_eq!(f32::BYTES, 4);
        assert_eq!(f64::BYTES, 8);
    }
}
