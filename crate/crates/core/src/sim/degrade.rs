use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};
use crate::mri::{apply_mask, complex_dims, expand, fft2c, ifft2c, CoilSensitivities, SamplingMask};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Undersampled multi-coil k-space `M F(S x) + n`, `[C,H,W,2]`.
///
/// The noise is zero-mean Gaussian with standard deviation `noise_sigma` on
/// the real and on the imaginary part, added on sampled columns only.
pub fn degrade_recon<T: Scalar>(
    x: &Tensor<T>,
    coils: &CoilSensitivities<T>,
    mask: &SamplingMask,
    noise_sigma: f64,
    seed: u64,
) -> Result<Tensor<T>> {
    if noise_sigma < 0.0 {
        return Err(Error::Parameter(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let k = apply_mask(&fft2c(&expand(x, coils)?)?, mask)?;
    if noise_sigma == 0.0 {
        return Ok(k);
    }
    let (_, _, w) = complex_dims(k.shape())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = k;
    for (i, pair) in out.data_mut().chunks_exact_mut(2).enumerate() {
        if mask.kept[i % w] {
            let nr: f64 = rng.sample(StandardNormal);
            let ni: f64 = rng.sample(StandardNormal);
            pair[0] = pair[0] + T::c(noise_sigma * nr);
            pair[1] = pair[1] + T::c(noise_sigma * ni);
        }
    }
    Ok(out)
}

/// Start and length of the retained central k-space band along an axis of
/// `n` samples when keeping an area fraction `keep_fraction`.
pub fn sr_block(n: usize, keep_fraction: f64) -> Result<(usize, usize)> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Parameter(format!("keep fraction must lie in (0, 1], got {keep_fraction}")));
    }
    let len = ((keep_fraction.sqrt() * n as f64 + 0.5).floor() as usize).min(n);
    if len == 0 {
        return Err(Error::Parameter(format!("keep fraction {keep_fraction} retains no k-space rows of {n}")));
    }
    Ok(((n - len).div_ceil(2), len))
}

/// Ideal low-pass degradation `F⁻¹ M F x` keeping a centered rectangle of
/// `sqrt(keep_fraction)` of each dimension.
pub fn degrade_sr<T: Scalar>(x: &Tensor<T>, keep_fraction: f64) -> Result<Tensor<T>> {
    let (_, h, w) = complex_dims(x.shape())?;
    let (r0, rn) = sr_block(h, keep_fraction)?;
    let (c0, cn) = sr_block(w, keep_fraction)?;
    let mut k = fft2c(x)?;
    let d = k.data_mut();
    for (i, pair) in d.chunks_exact_mut(2).enumerate() {
        let (row, col) = ((i / w) % h, i % w);
        if !(r0..r0 + rn).contains(&row) || !(c0..c0 + cn).contains(&col) {
            pair[0] = T::zero();
            pair[1] = T::zero();
        }
    }
    ifft2c(&k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GFieldParams {
    pub g_min: f64,
    /// Falloff length as a fraction of `min(H, W)`.
    pub tau_fraction: f64,
    pub sigma0: f64,
    pub alpha: f64,
}

impl Default for GFieldParams {
    fn default() -> Self {
        GFieldParams { g_min: 0.3, tau_fraction: 0.4, sigma0: 0.05, alpha: 3.0 }
    }
}

/// Effective sensitivity `g(r) ∈ (0, 1]` with noise scale
/// `σ(r) = sigma0 · (1 + alpha · (1 - g(r)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityLossField<T> {
    pub g: Tensor<T>,
    pub sigma0: f64,
    pub alpha: f64,
    /// `(row, col)` of the retained-coil anchor.
    pub anchor: (usize, usize),
}

impl<T: Scalar> SensitivityLossField<T> {
    pub fn noise_scale(&self) -> Tensor<T> {
        let (s0, a) = (T::c(self.sigma0), T::c(self.alpha));
        self.g.map(|g| s0 * (T::one() + a * (T::one() - g)))
    }
}

pub fn make_g_field<T: Scalar>(h: usize, w: usize, seed: u64) -> Result<SensitivityLossField<T>> {
    make_g_field_with(h, w, seed, &GFieldParams::default())
}

/// Gaussian falloff `g_min + (1 - g_min) exp(-d²/2τ²)` around an anchor
/// placed near a randomly chosen image border.
pub fn make_g_field_with<T: Scalar>(h: usize, w: usize, seed: u64, p: &GFieldParams) -> Result<SensitivityLossField<T>> {
    if h == 0 || w == 0 {
        return Err(shape_err!("g-field needs a non-empty grid"));
    }
    if !(p.g_min > 0.0 && p.g_min <= 1.0) || p.tau_fraction <= 0.0 || p.sigma0 < 0.0 || p.alpha < 0.0 {
        return Err(Error::Parameter(format!("invalid g-field parameters {p:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inset = |n: usize, rng: &mut ChaCha8Rng| rng.random_range(0..((n as f64 * 0.1).ceil() as usize).max(1));
    let anchor = match rng.random_range(0..4u8) {
        0 => (inset(h, &mut rng), rng.random_range(0..w)),
        1 => (h - 1 - inset(h, &mut rng), rng.random_range(0..w)),
        2 => (rng.random_range(0..h), inset(w, &mut rng)),
        _ => (rng.random_range(0..h), w - 1 - inset(w, &mut rng)),
    };
    let tau = p.tau_fraction * h.min(w) as f64;
    let g = Tensor::from_fn(&[h, w], |i| {
        let d2 = (i[0] as f64 - anchor.0 as f64).powi(2) + (i[1] as f64 - anchor.1 as f64).powi(2);
        T::c(p.g_min + (1.0 - p.g_min) * (-d2 / (2.0 * tau * tau)).exp())
    });
    Ok(SensitivityLossField { g, sigma0: p.sigma0, alpha: p.alpha, anchor })
}

/// `y(r) = g(r) x(r) + σ(r) n(r)` with i.i.d. standard normal `n`.
pub fn degrade_denoise<T: Scalar>(x: &Tensor<T>, field: &SensitivityLossField<T>, seed: u64) -> Result<Tensor<T>> {
    if x.shape() != field.g.shape() {
        return Err(shape_err!("denoise: image {:?} vs g-field {:?}", x.shape(), field.g.shape()));
    }
    let sigma = field.noise_scale();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = x
        .data()
        .iter()
        .zip(field.g.data())
        .zip(sigma.data())
        .map(|((&xv, &gv), &sv)| {
            let n: f64 = rng.sample(StandardNormal);
            gv * xv + sv * T::c(n)
        })
        .collect();
    Tensor::new(x.shape(), data)
}
