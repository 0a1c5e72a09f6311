use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use super::{complex_dims, from_complex, to_complex};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-coil complex sensitivity maps `[C, H, W, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivities<T> {
    maps: Tensor<T>,
}

impl<T: Scalar> CoilSensitivities<T> {
    pub fn new(maps: Tensor<T>) -> Result<Self> {
        if maps.ndim() != 4 {
            return Err(shape_err!("coil maps must be [C,H,W,2], got {:?}", maps.shape()));
        }
        complex_dims(maps.shape())?;
        Ok(CoilSensitivities { maps })
    }

    /// A single coil of unit sensitivity, making expand and reduce identities.
    pub fn uniform(h: usize, w: usize) -> Self {
        let maps = Tensor::from_fn(&[1, h, w, 2], |i| if i[3] == 0 { T::one() } else { T::zero() });
        CoilSensitivities { maps }
    }

    pub fn maps(&self) -> &Tensor<T> {
        &self.maps
    }

    pub fn coils(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.maps.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.maps.shape()[2]
    }

    /// `Σ_c |S_c|²` at every pixel, `[H, W]`.
    pub fn sum_of_squares(&self) -> Tensor<T> {
        let (c, h, w) = (self.coils(), self.height(), self.width());
        let d = self.maps.data();
        Tensor::from_fn(&[h, w], |i| {
            (0..c)
                .map(|ch| {
                    let o = ((ch * h + i[0]) * w + i[1]) * 2;
                    d[o] * d[o] + d[o + 1] * d[o + 1]
                })
                .fold(T::zero(), |a, b| a + b)
        })
    }

    pub fn cast<U: Scalar>(&self) -> CoilSensitivities<U> {
        CoilSensitivities { maps: self.maps.cast() }
    }
}

/// Synthetic maps: Gaussian lobes at equally spaced angles on a circle of
/// radius `0.6 * min(H, W) / 2`, each with a random linear phase, normalized
/// so that `Σ_c |S_c|² = 1` at every pixel.
pub fn make_coil_maps<T: Scalar>(coils: usize, h: usize, w: usize, seed: u64) -> Result<CoilSensitivities<T>> {
    if coils < 1 {
        return Err(Error::Parameter("need at least one coil".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = h.min(w) as f64;
    let radius = 0.6 * m / 2.0;
    let width = 0.4 * m;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let phases: Vec<[f64; 3]> = (0..coils)
        .map(|_| {
            [
                rng.random_range(-PI / 2.0..PI / 2.0),
                rng.random_range(-PI / 2.0..PI / 2.0),
                rng.random_range(-PI..PI),
            ]
        })
        .collect();
    let mut raw = vec![Complex::new(0.0f64, 0.0); coils * h * w];
    for c in 0..coils {
        let ang = 2.0 * PI * c as f64 / coils as f64;
        let (ly, lx) = (cy + radius * ang.sin(), cx + radius * ang.cos());
        let [a, b, off] = phases[c];
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - ly).powi(2) + (x as f64 - lx).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phi = a * (x as f64 - cx) / w as f64 + b * (y as f64 - cy) / h as f64 + off;
                raw[(c * h + y) * w + x] = Complex::from_polar(mag, phi);
            }
        }
    }
    for p in 0..h * w {
        let ss: f64 = (0..coils).map(|c| raw[c * h * w + p].norm_sqr()).sum();
        let inv = 1.0 / ss.sqrt();
        for c in 0..coils {
            raw[c * h * w + p] *= inv;
        }
    }
    let conv: Vec<Complex<T>> = raw.iter().map(|z| Complex::new(T::c(z.re), T::c(z.im))).collect();
    Ok(CoilSensitivities { maps: from_complex(&[coils, h, w, 2], &conv)? })
}

/// Sensitivity encoding `x -> (S_c x)_c`, `[H,W,2] -> [C,H,W,2]`.
pub fn expand<T: Scalar>(x: &Tensor<T>, s: &CoilSensitivities<T>) -> Result<Tensor<T>> {
    let (h, w) = (s.height(), s.width());
    if x.shape() != [h, w, 2] {
        return Err(shape_err!("expand: image {:?} vs coil maps {:?}", x.shape(), s.maps.shape()));
    }
    let xs = to_complex(x);
    let ss = to_complex(&s.maps);
    let out: Vec<Complex<T>> = ss.iter().enumerate().map(|(i, &sv)| sv * xs[i % (h * w)]).collect();
    from_complex(s.maps.shape(), &out)
}

/// Sensitivity reduction `y -> Σ_c conj(S_c) y_c`, the adjoint of [`expand`].
pub fn reduce<T: Scalar>(y: &Tensor<T>, s: &CoilSensitivities<T>) -> Result<Tensor<T>> {
    if y.shape() != s.maps.shape() {
        return Err(shape_err!("reduce: coil images {:?} vs coil maps {:?}", y.shape(), s.maps.shape()));
    }
    let (h, w) = (s.height(), s.width());
    let ys = to_complex(y);
    let ss = to_complex(&s.maps);
    let mut out = vec![Complex::new(T::zero(), T::zero()); h * w];
    for (i, (&sv, &yv)) in ss.iter().zip(&ys).enumerate() {
        out[i % (h * w)] = out[i % (h * w)] + sv.conj() * yv;
    }
    from_complex(&[h, w, 2], &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_coil_is_unit_magnitude() {
        let s = make_coil_maps::<f64>(1, 12, 10, 3).unwrap();
        assert!(s.sum_of_squares().data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn multi_coil_normalized() {
        for c in [2, 4, 8] {
            let s = make_coil_maps::<f64>(c, 16, 16, 11).unwrap();
            assert!(s.sum_of_squares().data().iter().all(|v| (v - 1.0).abs() < 1e-5));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_coil_maps::<f32>(4, 8, 8, 2).unwrap();
        assert_eq!(a, make_coil_maps::<f32>(4, 8, 8, 2).unwrap());
        assert_ne!(a, make_coil_maps::<f32>(4, 8, 8, 3).unwrap());
    }

    #[test]
    fn reduce_inverts_expand_when_normalized() {
        let s = make_coil_maps::<f64>(4, 8, 8, 5).unwrap();
        let x = Tensor::from_fn(&[8, 8, 2], |i| ((i[0] * 8 + i[1]) as f64 * 0.3).sin() + i[2] as f64);
        let back = reduce(&expand(&x, &s).unwrap(), &s).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn uniform_coil_is_identity() {
        let s = CoilSensitivities::<f64>::uniform(4, 4);
        let x = Tensor::from_fn(&[4, 4, 2], |i| (i[0] + 2 * i[1] + i[2]) as f64);
        assert_eq!(expand(&x, &s).unwrap().into_reshape(&[4, 4, 2]).unwrap(), x);
    }

    #[test]
    fn shape_mismatch() {
        let s = CoilSensitivities::<f64>::uniform(4, 4);
        assert!(expand(&Tensor::zeros(&[4, 5, 2]), &s).is_err());
        assert!(reduce(&Tensor::zeros(&[2, 4, 4, 2]), &s).is_err());
    }
}
