//! Centered, orthonormal 2D Fourier transforms.
//!
//! `fft2c = fftshift ∘ DFT ∘ ifftshift`, scaled by `1/sqrt(H W)`, so the DC
//! coefficient sits at `(H/2, W/2)` (integer division) and the transform is
//! unitary.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::complex_dims;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn fft2c<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    centered(x, FftDirection::Forward)
}

pub fn ifft2c<T: Scalar>(k: &Tensor<T>) -> Result<Tensor<T>> {
    centered(k, FftDirection::Inverse)
}

fn centered<T: Scalar>(x: &Tensor<T>, dir: FftDirection) -> Result<Tensor<T>> {
    let (batch, h, w) = complex_dims(x.shape())?;
    let mut planner = FftPlanner::<T>::new();
    let row: Arc<dyn Fft<T>> = planner.plan_fft(w, dir);
    let col: Arc<dyn Fft<T>> = planner.plan_fft(h, dir);
    let scale = T::one() / T::c((h * w) as f64).sqrt();
    let src = x.data();
    let mut out = vec![T::zero(); x.len()];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
    let mut column = vec![Complex::new(T::zero(), T::zero()); h];
    let mut scratch = vec![
        Complex::new(T::zero(), T::zero());
        row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())
    ];
    let (sh, sw) = (h / 2, w / 2);
    for b in 0..batch {
        let base = b * h * w * 2;
        // ifftshift: buf[i] = x[(i + n/2) mod n]
        for i in 0..h {
            let si = (i + sh) % h;
            for j in 0..w {
                let sj = (j + sw) % w;
                let o = base + (si * w + sj) * 2;
                buf[i * w + j] = Complex::new(src[o], src[o + 1]);
            }
        }
        for r in buf.chunks_exact_mut(w) {
            row.process_with_scratch(r, &mut scratch[..row.get_inplace_scratch_len()]);
        }
        for j in 0..w {
            for i in 0..h {
                column[i] = buf[i * w + j];
            }
            col.process_with_scratch(&mut column, &mut scratch[..col.get_inplace_scratch_len()]);
            for i in 0..h {
                buf[i * w + j] = column[i];
            }
        }
        // fftshift: out[(i + n/2) mod n] = buf[i]
        for i in 0..h {
            let di = (i + sh) % h;
            for j in 0..w {
                let dj = (j + sw) % w;
                let v = buf[i * w + j] * scale;
                let o = base + (di * w + dj) * 2;
                out[o] = v.re;
                out[o + 1] = v.im;
            }
        }
    }
    Tensor::new(x.shape(), out)
}
