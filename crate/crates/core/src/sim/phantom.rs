use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub n_ellipses: usize,
    pub seed: u64,
}

/// Random ellipses on a dark background, clipped to `[0, 1]` and smoothed
/// with a 3x3 box filter.
pub fn make_phantom<T: Scalar>(spec: &PhantomSpec) -> Result<Tensor<T>> {
    let (h, w) = (spec.height, spec.width);
    if h < 16 || w < 16 {
        return Err(Error::Parameter(format!("phantom needs at least 16x16, got {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut img = vec![0.0f64; h * w];
    for _ in 0..spec.n_ellipses {
        let cx = rng.random_range(-0.6..0.6);
        let cy = rng.random_range(-0.6..0.6);
        let a = rng.random_range(0.08..0.6);
        let b = rng.random_range(0.08..0.6);
        let theta = rng.random_range(0.0..PI);
        let val = rng.random_range(0.1..0.7);
        let (s, c) = theta.sin_cos();
        for y in 0..h {
            let py = 2.0 * (y as f64 + 0.5) / h as f64 - 1.0 - cy;
            for x in 0..w {
                let px = 2.0 * (x as f64 + 0.5) / w as f64 - 1.0 - cx;
                let u = px * c + py * s;
                let v = -px * s + py * c;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    img[y * w + x] += val;
                }
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        acc += img[yy as usize * w + xx as usize];
                    }
                }
            }
            out[y * w + x] = T::c((acc / 9.0).clamp(0.0, 1.0));
        }
    }
    Tensor::new(&[h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, seed: u64) -> PhantomSpec {
        PhantomSpec { height: 32, width: 24, n_ellipses: n, seed }
    }

    #[test]
    fn empty_phantom_is_black() {
        let p = make_phantom::<f64>(&spec(0, 3)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn values_in_unit_range() {
        for seed in 0..1000 {
            let p = make_phantom::<f32>(&PhantomSpec { height: 16, width: 16, n_ellipses: 8, seed }).unwrap();
            assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)), "seed {seed}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = make_phantom::<f64>(&spec(6, 9)).unwrap();
        assert_eq!(a, make_phantom::<f64>(&spec(6, 9)).unwrap());
        assert_ne!(a, make_phantom::<f64>(&spec(6, 10)).unwrap());
        assert!(a.max() > 0.0);
    }

    #[test]
    fn too_small_rejected() {
        assert!(make_phantom::<f64>(&PhantomSpec { height: 8, width: 32, n_ellipses: 1, seed: 0 }).is_err());
    }
}
