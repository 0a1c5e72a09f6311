use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::complex_dims;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cartesian column mask over the phase-encode (last spatial) axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub kept: Vec<bool>,
    pub acceleration: u32,
    pub center_fraction: f64,
}

impl SamplingMask {
    pub fn full(width: usize) -> Self {
        SamplingMask { kept: vec![true; width], acceleration: 1, center_fraction: 1.0 }
    }

    pub fn width(&self) -> usize {
        self.kept.len()
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// Number of fully sampled central columns, rounded half up.
    pub fn center_count(width: usize, center_fraction: f64) -> usize {
        ((center_fraction * width as f64 + 0.5).floor() as usize).min(width)
    }

    /// Half-open column range of the fully sampled band.
    pub fn center_band(width: usize, center_fraction: f64) -> (usize, usize) {
        let n = Self::center_count(width, center_fraction);
        let start = (width - n).div_ceil(2);
        (start, start + n)
    }

    /// `0/1` vector of length `width`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.kept.iter().map(|&k| if k { T::one() } else { T::zero() }).collect();
        Tensor::new(&[self.width()], data).expect("length matches")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, acceleration: u32, center_fraction: f64) -> Result<Self> {
        if t.ndim() != 1 {
            return Err(shape_err!("mask tensor must be 1-D, got {:?}", t.shape()));
        }
        Ok(SamplingMask {
            kept: t.data().iter().map(|&v| v != T::zero()).collect(),
            acceleration,
            center_fraction,
        })
    }
}

/// Seeded random column mask: the central band is always kept and every
/// other column is kept independently with probability
/// `(width/acceleration - n_center) / (width - n_center)`, clamped to `[0, 1]`.
pub fn generate_mask(width: usize, acceleration: u32, center_fraction: f64, seed: u64) -> Result<SamplingMask> {
    if acceleration < 1 {
        return Err(Error::Parameter(format!("acceleration must be >= 1, got {acceleration}")));
    }
    if !(center_fraction > 0.0 && center_fraction < 1.0) {
        return Err(Error::Parameter(format!("center fraction must lie in (0, 1), got {center_fraction}")));
    }
    if width == 0 {
        return Err(Error::Parameter("mask width must be positive".into()));
    }
    let (c0, c1) = SamplingMask::center_band(width, center_fraction);
    let n_center = c1 - c0;
    let p = if width > n_center {
        ((width as f64 / acceleration as f64 - n_center as f64) / (width - n_center) as f64).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept = (0..width)
        .map(|j| {
            if (c0..c1).contains(&j) {
                true
            } else {
                rng.random::<f64>() < p
            }
        })
        .collect();
    Ok(SamplingMask { kept, acceleration, center_fraction })
}

/// Zeroes unsampled columns of a complex tensor `[..., H, W, 2]`.
pub fn apply_mask<T: Scalar>(k: &Tensor<T>, m: &SamplingMask) -> Result<Tensor<T>> {
    let (batch, h, w) = complex_dims(k.shape())?;
    if m.width() != w {
        return Err(shape_err!("mask width {} does not match k-space width {w}", m.width()));
    }
    let mut out = k.clone();
    let d = out.data_mut();
    for row in 0..batch * h {
        for (j, &keep) in m.kept.iter().enumerate() {
            if !keep {
                d[(row * w + j) * 2] = T::zero();
                d[(row * w + j) * 2 + 1] = T::zero();
            }
        }
    }
    Ok(out)
}
