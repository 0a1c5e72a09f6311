//! MRI physics operators on complex tensors.
//!
//! A complex tensor is a real [`Tensor`] whose trailing extent is 2, holding
//! interleaved real and imaginary parts.

mod coils;
mod fft;
mod mask;

pub use coils::{expand, make_coil_maps, reduce, CoilSensitivities};
pub use fft::{fft2c, ifft2c};
pub use mask::{apply_mask, generate_mask, SamplingMask};

use rustfft::num_complex::Complex;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Splits a complex shape `[..., H, W, 2]` into `(batch, H, W)`.
pub fn complex_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 3 || shape[shape.len() - 1] != 2 {
        return Err(shape_err!("expected complex tensor [..., H, W, 2], got {shape:?}"));
    }
    let nd = shape.len();
    Ok((shape[..nd - 3].iter().product(), shape[nd - 3], shape[nd - 2]))
}

pub fn to_complex<T: Scalar>(x: &Tensor<T>) -> Vec<Complex<T>> {
    x.data().chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect()
}

pub fn from_complex<T: Scalar>(shape: &[usize], z: &[Complex<T>]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(z.len() * 2);
    for v in z {
        data.push(v.re);
        data.push(v.im);
    }
    Tensor::new(shape, data)
}

/// Complex tensor with zero imaginary part.
pub fn real_to_complex<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut shape = x.shape().to_vec();
    shape.push(2);
    let mut data = Vec::with_capacity(x.len() * 2);
    for &v in x.data() {
        data.push(v);
        data.push(T::zero());
    }
    Tensor::new(&shape, data).expect("shape derived from input")
}

/// Elementwise modulus, dropping the trailing pair axis.
pub fn magnitude<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>> {
    complex_dims(z.shape())?;
    let shape = &z.shape()[..z.ndim() - 1];
    Tensor::new(shape, z.data().chunks_exact(2).map(|p| p[0].hypot(p[1])).collect())
}

/// Complex inner product `Σ conj(a) b`.
pub fn inner<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Complex<T> {
    assert_eq!(a.shape(), b.shape());
    let mut acc = Complex::new(T::zero(), T::zero());
    for (p, q) in a.data().chunks_exact(2).zip(b.data().chunks_exact(2)) {
        acc = acc + Complex::new(p[0], -p[1]) * Complex::new(q[0], q[1]);
    }
    acc
}
