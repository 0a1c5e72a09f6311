//! Unrolled reconstruction cascade.
//!
//! Each iteration updates the multi-coil k-space estimate
//!
//! ```text
//! k <- k - mu_t * M(k - k_meas) + F E D_t(R F^-1 k)
//! ```
//!
//! and the output image is `R F^-1 k` after the last iteration. `D_t` is the
//! backbone correction (the backbone minus its identity path) unless
//! [`UnrolledConfig::residual_in_regularizer`] is set.

use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{shape_err, Error, Result};
use crate::mri::{CoilSensitivities, SamplingMask};
use crate::nn::{backbone_correction, backbone_forward, init_backbone, BackboneConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledConfig {
    pub iterations: usize,
    pub mu_init: f64,
    /// One backbone and one step size for all iterations.
    pub share_weights: bool,
    /// Keep every `mu_t` fixed at `mu_init` instead of learning it.
    pub fixed_mu: bool,
    /// Use the full backbone output (identity path included) as the
    /// k-space correction.
    pub residual_in_regularizer: bool,
    pub backbone: BackboneConfig,
}

impl UnrolledConfig {
    pub fn new(backbone: BackboneConfig) -> Self {
        UnrolledConfig {
            iterations: 8,
            mu_init: 1.0,
            share_weights: false,
            fixed_mu: false,
            residual_in_regularizer: false,
            backbone,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("cascade needs at least one iteration".into()));
        }
        if self.backbone.in_channels != 2 {
            return Err(Error::Config(format!(
                "cascade backbone must map 2 channels (re, im), got {}",
                self.backbone.in_channels
            )));
        }
        self.backbone.validate()
    }

    fn slot(&self, t: usize) -> usize {
        if self.share_weights { 0 } else { t }
    }

    pub fn mu_name(&self, prefix: &str, t: usize) -> String {
        format!("{prefix}.mu{}", self.slot(t))
    }

    pub fn backbone_prefix(&self, prefix: &str, t: usize) -> String {
        format!("{prefix}.d{}", self.slot(t))
    }
}

pub fn init_unrolled<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: &UnrolledConfig, rng: &mut impl Rng) -> Result<()> {
    cfg.validate()?;
    let slots = if cfg.share_weights { 1 } else { cfg.iterations };
    for t in 0..slots {
        if !cfg.fixed_mu {
            store.insert(cfg.mu_name(prefix, t), Tensor::full(&[1], T::c(cfg.mu_init)))?;
        }
        init_backbone(store, &cfg.backbone_prefix(prefix, t), &cfg.backbone, rng)?;
    }
    Ok(())
}

/// `k - mu * M(k - k_meas)`; `mu` is a one-element tensor.
pub fn dc_step<T: Scalar>(g: &mut Graph<T>, k: Var, k_meas: Var, m: &SamplingMask, mu: Var) -> Result<Var> {
    if g.shape(k) != g.shape(k_meas) {
        return Err(shape_err!("k-space {:?} vs measurements {:?}", g.shape(k), g.shape(k_meas)));
    }
    if g.value(mu).len() != 1 {
        return Err(shape_err!("step size must be a single value, got {:?}", g.shape(mu)));
    }
    let diff = g.sub(k, k_meas)?;
    let masked = g.apply_mask(diff, m)?;
    let step = g.mul(masked, mu)?;
    g.sub(k, step)
}

/// Complex image `[H,W,2]` to a `[1,2,H,W]` feature map and back.
pub fn complex_to_channels<T: Scalar>(g: &mut Graph<T>, z: Var) -> Result<Var> {
    let s = g.shape(z).to_vec();
    if s.len() != 3 || s[2] != 2 {
        return Err(shape_err!("expected complex image [H,W,2], got {s:?}"));
    }
    let p = g.permute(z, &[2, 0, 1])?;
    g.reshape(p, &[1, 2, s[0], s[1]])
}

pub fn channels_to_complex<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 || s[0] != 1 || s[1] != 2 {
        return Err(shape_err!("expected [1,2,H,W], got {s:?}"));
    }
    let r = g.reshape(x, &[2, s[2], s[3]])?;
    g.permute(r, &[1, 2, 0])
}

/// `F E D(R F^-1 k)` for an arbitrary image-domain map `d` on `[1,2,H,W]`.
pub fn reg_step<T: Scalar>(
    g: &mut Graph<T>,
    k: Var,
    coils: &CoilSensitivities<T>,
    d: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let img = g.ifft2c(k)?;
    let x = g.reduce(img, coils)?;
    let feat = complex_to_channels(g, x)?;
    let out = d(g, feat)?;
    if g.shape(out) != g.shape(feat) {
        return Err(shape_err!("regularizer changed shape {:?} -> {:?}", g.shape(feat), g.shape(out)));
    }
    let z = channels_to_complex(g, out)?;
    let y = g.expand(z, coils)?;
    g.fft2c(y)
}

/// k-space estimates `k^0 = k_meas, k^1, ..., k^T`.
pub fn unroll_states<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    cfg: &UnrolledConfig,
    k_meas: Var,
    m: &SamplingMask,
    coils: &CoilSensitivities<T>,
) -> Result<Vec<Var>> {
    cfg.validate()?;
    let mut states = vec![k_meas];
    let mut k = k_meas;
    for t in 0..cfg.iterations {
        let mu = if cfg.fixed_mu {
            g.constant(Tensor::full(&[1], T::c(cfg.mu_init)))
        } else {
            g.param(store, &cfg.mu_name(prefix, t))?
        };
        let dc = dc_step(g, k, k_meas, m, mu)?;
        let bp = cfg.backbone_prefix(prefix, t);
        let corr = reg_step(g, k, coils, |g, x| {
            if cfg.residual_in_regularizer {
                backbone_forward(g, store, &bp, &cfg.backbone, x)
            } else {
                backbone_correction(g, store, &bp, &cfg.backbone, x)
            }
        })?;
        k = g.add(dc, corr)?;
        if !g.value(k).all_finite() {
            return Err(Error::Divergence { iteration: t + 1 });
        }
        states.push(k);
    }
    Ok(states)
}

/// Complex image estimate `R F^-1 k^T`, shape `[H,W,2]`.
pub fn unroll_forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    cfg: &UnrolledConfig,
    k_meas: Var,
    m: &SamplingMask,
    coils: &CoilSensitivities<T>,
) -> Result<Var> {
    let states = unroll_states(g, store, prefix, cfg, k_meas, m, coils)?;
    let last = *states.last().expect("at least k^0");
    let img = g.ifft2c(last)?;
    g.reduce(img, coils)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::{self, generate_mask};
    use crate::nn::{BlockConfig, Mixer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(iterations: usize) -> UnrolledConfig {
        let backbone = BackboneConfig {
            width: 4,
            enc_blocks: vec![1],
            middle_blocks: 1,
            dec_blocks: vec![1],
            in_channels: 2,
            out_channels: 2,
            block: BlockConfig::new(4, Mixer::LocalDw),
        };
        UnrolledConfig { iterations, ..UnrolledConfig::new(backbone) }
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn dc_step_scalar_cases() {
        let m = SamplingMask::full(1);
        for (mu, want) in [(1.0, 2.0), (0.0, 4.0), (0.5, 3.0)] {
            let mut g = Graph::<f64>::new();
            let k = g.constant(Tensor::new(&[1, 1, 1, 2], vec![4.0, 0.0]).unwrap());
            let km = g.constant(Tensor::new(&[1, 1, 1, 2], vec![2.0, 0.0]).unwrap());
            let mu = g.constant(Tensor::full(&[1], mu));
            let out = dc_step(&mut g, k, km, &m, mu).unwrap();
            assert_eq!(g.value(out).data(), &[want, 0.0]);
        }
    }

    #[test]
    fn dc_step_leaves_unsampled_columns() {
        let mask = SamplingMask { kept: vec![true, false, true, false], acceleration: 2, center_fraction: 0.0 };
        let mut g = Graph::<f64>::new();
        let k = g.constant(random(&[1, 4, 4, 2], 1));
        let km = g.constant(mri::apply_mask(&random(&[1, 4, 4, 2], 2), &mask).unwrap());
        let mu = g.constant(Tensor::full(&[1], 1.0));
        let out = dc_step(&mut g, k, km, &mask, mu).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                for p in 0..2 {
                    let want = if mask.kept[c] { g.value(km).get(&[0, r, c, p]) } else { g.value(k).get(&[0, r, c, p]) };
                    assert_eq!(g.value(out).get(&[0, r, c, p]), want);
                }
            }
        }
    }

    #[test]
    fn zero_correction_collapses_to_zero_filled() {
        let cfg = UnrolledConfig { fixed_mu: true, ..small_cfg(3) };
        let mut store = ParamStore::new();
        init_unrolled(&mut store, "c", &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = random(&[8, 8, 2], 3);
        let mask = generate_mask(8, 4, 0.25, 1).unwrap();
        let coils = CoilSensitivities::uniform(8, 8);
        let km = mri::apply_mask(&mri::fft2c(&mri::expand(&x, &coils).unwrap()).unwrap(), &mask).unwrap();
        let zf = mri::reduce(&mri::ifft2c(&km).unwrap(), &coils).unwrap();
        let mut g = Graph::new();
        let kv = g.constant(km);
        let out = unroll_forward(&mut g, &store, "c", &cfg, kv, &mask, &coils).unwrap();
        assert!(g.value(out).max_abs_diff(&zf) < 1e-12);
    }

    #[test]
    fn single_step_matches_symbolic_update() {
        // D multiplies the image by 0.5i, so the correction is 0.5i * k and
        // k1 = k - 0.5 M(k - km) + 0.5i k.
        let mask = SamplingMask { kept: vec![true, false], acceleration: 2, center_fraction: 0.0 };
        let coils = CoilSensitivities::uniform(2, 2);
        let k0 = random(&[1, 2, 2, 2], 9);
        let km = mri::apply_mask(&random(&[1, 2, 2, 2], 10), &mask).unwrap();
        let mut g = Graph::<f64>::new();
        let k = g.constant(k0.clone());
        let kmv = g.constant(km.clone());
        let mu = g.constant(Tensor::full(&[1], 0.5));
        let dc = dc_step(&mut g, k, kmv, &mask, mu).unwrap();
        let w = g.constant(Tensor::new(&[2, 2, 1, 1], vec![0.0, -0.5, 0.5, 0.0]).unwrap());
        let corr = reg_step(&mut g, k, &coils, |g, x| g.conv2d(x, w, None, 1)).unwrap();
        let k1 = g.add(dc, corr).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let (a, b) = (k0.get(&[0, r, c, 0]), k0.get(&[0, r, c, 1]));
                let (ma, mb) = (km.get(&[0, r, c, 0]), km.get(&[0, r, c, 1]));
                let s = if mask.kept[c] { 0.5 } else { 0.0 };
                let want_re = a - s * (a - ma) - 0.5 * b;
                let want_im = b - s * (b - mb) + 0.5 * a;
                assert!((g.value(k1).get(&[0, r, c, 0]) - want_re).abs() < 1e-12);
                assert!((g.value(k1).get(&[0, r, c, 1]) - want_im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_reports_iteration() {
        let cfg = small_cfg(2);
        let mut store = ParamStore::<f64>::new();
        init_unrolled(&mut store, "c", &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        store.get_mut("c.mu1").unwrap().data_mut()[0] = f64::INFINITY;
        let mask = generate_mask(8, 4, 0.25, 1).unwrap();
        let coils = CoilSensitivities::uniform(8, 8);
        let mut g = Graph::new();
        let kv = g.constant(mri::apply_mask(&random(&[1, 8, 8, 2], 4), &mask).unwrap());
        let err = unroll_forward(&mut g, &store, "c", &cfg, kv, &mask, &coils).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 2 }), "{err}");
    }

    #[test]
    fn shared_weights_use_one_slot() {
        let cfg = UnrolledConfig { share_weights: true, ..small_cfg(4) };
        let mut store = ParamStore::<f32>::new();
        init_unrolled(&mut store, "c", &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(store.contains("c.mu0") && !store.contains("c.mu1"));
        assert_eq!(store.count("c.d1."), 0);
    }
}
