//! Large-small dynamic convolution.
//!
//! A pointwise -> large depthwise -> pointwise chain looks at a wide
//! neighbourhood and predicts, at every location, `G` small `K_S x K_S`
//! kernels. Those kernels then aggregate the local neighbourhood of each
//! channel in their group.

use rand::Rng;

use super::init_conv;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsConvConfig {
    /// Perception (large) kernel size.
    pub kl: usize,
    /// Aggregation (small) kernel size.
    pub ks: usize,
    /// Channel groups sharing one dynamic kernel.
    pub groups: usize,
    /// Softmax over the `K_S²` taps of each dynamic kernel.
    pub normalize_kernels: bool,
}

impl Default for LsConvConfig {
    fn default() -> Self {
        LsConvConfig { kl: 7, ks: 3, groups: 8, normalize_kernels: false }
    }
}

impl LsConvConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.kl.is_multiple_of(2) || self.ks.is_multiple_of(2) {
            return Err(Error::Config(format!("LSConv kernels must be odd, got K_L={} K_S={}", self.kl, self.ks)));
        }
        if self.groups == 0 || !channels.is_multiple_of(self.groups) {
            return Err(Error::Config(format!("LSConv groups {} must divide {channels} channels", self.groups)));
        }
        Ok(())
    }

    pub fn taps(&self) -> usize {
        self.ks * self.ks
    }

    /// Parameters of the perception chain on `channels` inputs.
    pub fn param_count(&self, channels: usize) -> usize {
        let dyn_out = self.groups * self.taps();
        (channels * channels + channels) + (channels * self.kl * self.kl + channels) + (channels * dyn_out + dyn_out)
    }
}

pub fn init_lsconv<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    channels: usize,
    cfg: &LsConvConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    cfg.validate(channels)?;
    init_conv(store, &format!("{prefix}.pw_in"), channels, channels, 1, rng)?;
    init_conv(store, &format!("{prefix}.dw"), channels, 1, cfg.kl, rng)?;
    init_conv(store, &format!("{prefix}.pw_out"), cfg.groups * cfg.taps(), channels, 1, rng)
}

/// Dynamic weights `[N, G·K_S², H, W]`.
pub fn lsconv_weights<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    cfg: &LsConvConfig,
    x: Var,
) -> Result<Var> {
    let channels = g.shape(x)[1];
    cfg.validate(channels)?;
    let h = super::conv(g, store, &format!("{prefix}.pw_in"), x, 1)?;
    let h = super::conv(g, store, &format!("{prefix}.dw"), h, channels)?;
    super::conv(g, store, &format!("{prefix}.pw_out"), h, 1)
}

/// Grouped aggregation of `x` with per-location kernels `w`.
pub fn lsconv_aggregate<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, cfg: &LsConvConfig) -> Result<Var> {
    let w = if cfg.normalize_kernels { g.tap_softmax(w, cfg.taps())? } else { w };
    g.dynamic_aggregate(x, w, cfg.groups, cfg.ks)
}

pub fn lsconv<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, cfg: &LsConvConfig, x: Var) -> Result<Var> {
    let w = lsconv_weights(g, store, prefix, cfg, x)?;
    lsconv_aggregate(g, x, w, cfg)
}
