//! Floating-point scalar abstraction shared by every numeric routine.
//!
//! Training runs in `f32`; gradient checks and operator tests run in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// On-disk element type of an MRT1 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Real32,
    Real64,
    /// Interleaved `f32` real/imaginary pairs.
    Complex64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Real32 => 0,
            DType::Real64 => 1,
            DType::Complex64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::Real32),
            1 => Some(DType::Real64),
            2 => Some(DType::Complex64),
            _ => None,
        }
    }

    /// Bytes per stored real value.
    pub fn value_bytes(self) -> usize {
        match self {
            DType::Real64 => 8,
            DType::Real32 | DType::Complex64 => 4,
        }
    }
}

/// Real floating-point type usable for tensors, FFTs and the gradient tape.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + FftNum + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    /// Lossy conversion from an `f64` literal.
    fn c(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::Real32;

    #[inline]
    fn c(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::Real64;

    #[inline]
    fn c(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// `Σ a_i b_i` with eight independent accumulators.
///
/// The lane split is fixed, so results are reproducible run to run.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for k in 0..chunks {
        let xa = &a[k * 8..k * 8 + 8];
        let xb = &b[k * 8..k * 8 + 8];
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], out: &mut [T]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o = *o + alpha * v;
    }
}

/// Sum with the same fixed lane split as [`dot`].
#[inline]
pub fn sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for k in 0..chunks {
        for l in 0..8 {
            acc[l] = acc[l] + a[k * 8 + l];
        }
    }
    let mut tail = T::zero();
    for &v in &a[chunks * 8..] {
        tail = tail + v;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}
