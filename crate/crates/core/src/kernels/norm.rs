//! Channel layer normalization for NCHW maps.
//!
//! Statistics are taken over the channel axis independently at every
//! sample and spatial location.

use super::nchw;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = nchw(x.shape(), "layer_norm")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err!("layer_norm: affine shapes {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()));
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
    }
    Ok((n, c, h * w))
}

/// Per-location mean and reciprocal std over channels for sample `n`.
fn stats<T: Scalar>(xd: &[T], n: usize, c: usize, hw: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let base = n * c * hw;
    let inv_c = T::one() / T::c(c as f64);
    let mut mean = vec![T::zero(); hw];
    for ch in 0..c {
        for (m, &v) in mean.iter_mut().zip(&xd[base + ch * hw..base + (ch + 1) * hw]) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m * inv_c);
    let mut var = vec![T::zero(); hw];
    for ch in 0..c {
        for ((s, &v), &m) in var.iter_mut().zip(&xd[base + ch * hw..base + (ch + 1) * hw]).zip(&mean) {
            let d = v - m;
            *s = *s + d * d;
        }
    }
    let rstd = var.iter().map(|&s| T::one() / (s * inv_c + eps).sqrt()).collect();
    (mean, rstd)
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let (n, c, hw) = check(x, gamma, beta, eps)?;
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        let (mean, rstd) = stats(xd, s, c, hw, T::c(eps));
        for ch in 0..c {
            let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
            let off = (s * c + ch) * hw;
            for p in 0..hw {
                out[off + p] = (xd[off + p] - mean[p]) * rstd[p] * ga + be;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let beta = Tensor::zeros(gamma.shape());
    let (n, c, hw) = check(x, gamma, &beta, eps)?;
    let xd = x.data();
    let gd = grad_out.data();
    let inv_c = T::one() / T::c(c as f64);
    let mut gx = vec![T::zero(); x.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for s in 0..n {
        let (mean, rstd) = stats(xd, s, c, hw, T::c(eps));
        // mean over channels of dxhat and dxhat * xhat
        let mut m1 = vec![T::zero(); hw];
        let mut m2 = vec![T::zero(); hw];
        for ch in 0..c {
            let ga = gamma.data()[ch];
            let off = (s * c + ch) * hw;
            let mut acc_g = T::zero();
            let mut acc_b = T::zero();
            for p in 0..hw {
                let xhat = (xd[off + p] - mean[p]) * rstd[p];
                let g = gd[off + p];
                acc_g = acc_g + g * xhat;
                acc_b = acc_b + g;
                let dxhat = g * ga;
                m1[p] = m1[p] + dxhat;
                m2[p] = m2[p] + dxhat * xhat;
            }
            gg[ch] = gg[ch] + acc_g;
            gb[ch] = gb[ch] + acc_b;
        }
        for ch in 0..c {
            let ga = gamma.data()[ch];
            let off = (s * c + ch) * hw;
            for p in 0..hw {
                let xhat = (xd[off + p] - mean[p]) * rstd[p];
                let dxhat = gd[off + p] * ga;
                gx[off + p] = rstd[p] * (dxhat - m1[p] * inv_c - xhat * m2[p] * inv_c);
            }
        }
    }
    Ok((Tensor::new(x.shape(), gx)?, Tensor::new(&[c], gg)?, Tensor::new(&[c], gb)?))
}

/// Spatial mean: `[N,C,H,W] -> [N,C,1,1]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw(x.shape(), "global_avg_pool")?;
    let hw = h * w;
    let inv = T::one() / T::c(hw as f64);
    let data = (0..n * c).map(|i| crate::scalar::sum(&x.data()[i * hw..(i + 1) * hw]) * inv).collect();
    Tensor::new(&[n, c, 1, 1], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::<f64>::full(&[1, 4, 3, 3], 2.5);
        let y = layer_norm(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), LAYER_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_gamma_collapses_to_beta() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 2, 2], |i| (i[1] * 7 + i[2] * 3 + i[3]) as f64);
        let beta = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = layer_norm(&x, &Tensor::zeros(&[3]), &beta, LAYER_NORM_EPS).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, beta.data()[(i / 4) % 3]);
        }
    }

    #[test]
    fn channel_statistics_are_standardized() {
        let mut s = 12345u64;
        let x = Tensor::<f64>::from_fn(&[2, 6, 4, 5], |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 40) as f64 / 1e6 * 3.0 - 7.0
        });
        let y = layer_norm(&x, &Tensor::ones(&[6]), &Tensor::zeros(&[6]), LAYER_NORM_EPS).unwrap();
        for n in 0..2 {
            for yy in 0..4 {
                for xx in 0..5 {
                    let vals: Vec<f64> = (0..6).map(|c| y.get(&[n, c, yy, xx])).collect();
                    let m = vals.iter().sum::<f64>() / 6.0;
                    let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 6.0;
                    assert!(m.abs() < 1e-6);
                    assert!((v - 1.0).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        assert!(layer_norm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 0.0).is_err());
    }
}
