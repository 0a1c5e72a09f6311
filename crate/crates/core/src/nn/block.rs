use rand::Rng;

use super::lsconv::{init_lsconv, lsconv, LsConvConfig};
use super::{conv, init_conv};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{shape_err, Error, Result};
use crate::kernels::norm::LAYER_NORM_EPS;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatial token mixer inside the first gated sub-block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixer {
    /// Depthwise `dw_kernel x dw_kernel` convolution.
    LocalDw,
    /// Large-small dynamic convolution.
    LsConv,
}

impl Mixer {
    pub fn as_str(self) -> &'static str {
        match self {
            Mixer::LocalDw => "local_dw3",
            Mixer::LsConv => "lsconv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "local_dw3" | "local" | "naf" => Ok(Mixer::LocalDw),
            "lsconv" | "lsg" => Ok(Mixer::LsConv),
            _ => Err(Error::Config(format!("unknown mixer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub channels: usize,
    pub mixer: Mixer,
    pub dw_kernel: usize,
    pub expansion: usize,
    pub lsconv: LsConvConfig,
    /// Simplified channel attention after the gate; off by default.
    pub channel_attention: bool,
}

impl BlockConfig {
    pub fn new(channels: usize, mixer: Mixer) -> Self {
        BlockConfig { channels, mixer, dw_kernel: 3, expansion: 2, lsconv: LsConvConfig::default(), channel_attention: false }
    }

    pub fn expanded(&self) -> usize {
        self.channels * self.expansion
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !self.channels.is_multiple_of(2) {
            return Err(Error::Config(format!("block channels must be even, got {}", self.channels)));
        }
        if self.dw_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("depthwise kernel must be odd, got {}", self.dw_kernel)));
        }
        if self.expansion == 0 || !self.expanded().is_multiple_of(2) {
            return Err(Error::Config(format!("expansion {} leaves an odd gate width", self.expansion)));
        }
        if self.mixer == Mixer::LsConv {
            self.lsconv.validate(self.expanded())?;
        }
        Ok(())
    }

    /// Closed-form parameter count of one block.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let e = self.expanded();
        let half = e / 2;
        let ln = 2 * c;
        let pw_expand = e * c + e;
        let pw_project = c * half + c;
        let mixer = match self.mixer {
            Mixer::LocalDw => e * self.dw_kernel * self.dw_kernel + e,
            Mixer::LsConv => self.lsconv.param_count(e),
        };
        let sca = if self.channel_attention { half * half + half } else { 0 };
        2 * (ln + pw_expand + pw_project) + mixer + sca
    }
}

/// `SG(Z) = Z1 ⊙ Z2` for the two channel halves of `z`.
pub fn simple_gate<T: Scalar>(g: &mut Graph<T>, z: Var) -> Result<Var> {
    let (a, b) = g.split_channels(z)?;
    g.mul(a, b)
}

fn init_ln<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, c: usize) -> Result<()> {
    store.insert(format!("{prefix}.gamma"), Tensor::ones(&[c]))?;
    store.insert(format!("{prefix}.beta"), Tensor::zeros(&[c]))
}

fn ln<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param(store, &format!("{prefix}.gamma"))?;
    let beta = g.param(store, &format!("{prefix}.beta"))?;
    g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
}

pub fn init_block<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: &BlockConfig, rng: &mut impl Rng) -> Result<()> {
    cfg.validate()?;
    let c = cfg.channels;
    let e = cfg.expanded();
    init_ln(store, &format!("{prefix}.ln1"), c)?;
    init_conv(store, &format!("{prefix}.pw1"), e, c, 1, rng)?;
    match cfg.mixer {
        Mixer::LocalDw => init_conv(store, &format!("{prefix}.dw"), e, 1, cfg.dw_kernel, rng)?,
        Mixer::LsConv => init_lsconv(store, &format!("{prefix}.ls"), e, &cfg.lsconv, rng)?,
    }
    if cfg.channel_attention {
        init_conv(store, &format!("{prefix}.sca"), e / 2, e / 2, 1, rng)?;
    }
    init_conv(store, &format!("{prefix}.pw2"), c, e / 2, 1, rng)?;
    init_ln(store, &format!("{prefix}.ln2"), c)?;
    init_conv(store, &format!("{prefix}.pw3"), e, c, 1, rng)?;
    init_conv(store, &format!("{prefix}.pw4"), c, e / 2, 1, rng)
}

/// Two residual sub-blocks:
/// `x + PW(SG(mix(PW(LN x))))` followed by `y + PW(SG(PW(LN y)))`.
pub fn gated_block<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, cfg: &BlockConfig, x: Var) -> Result<Var> {
    cfg.validate()?;
    if g.shape(x).len() != 4 || g.shape(x)[1] != cfg.channels {
        return Err(shape_err!("block `{prefix}` expects {} channels, got {:?}", cfg.channels, g.shape(x)));
    }
    let e = cfg.expanded();
    let h = ln(g, store, &format!("{prefix}.ln1"), x)?;
    let h = conv(g, store, &format!("{prefix}.pw1"), h, 1)?;
    let h = match cfg.mixer {
        Mixer::LocalDw => conv(g, store, &format!("{prefix}.dw"), h, e)?,
        Mixer::LsConv => lsconv(g, store, &format!("{prefix}.ls"), &cfg.lsconv, h)?,
    };
    let mut h = simple_gate(g, h)?;
    if cfg.channel_attention {
        let pooled = g.global_avg_pool(h)?;
        let att = conv(g, store, &format!("{prefix}.sca"), pooled, 1)?;
        h = g.mul(h, att)?;
    }
    let h = conv(g, store, &format!("{prefix}.pw2"), h, 1)?;
    let y = g.add(x, h)?;

    let h = ln(g, store, &format!("{prefix}.ln2"), y)?;
    let h = conv(g, store, &format!("{prefix}.pw3"), h, 1)?;
    let h = simple_gate(g, h)?;
    let h = conv(g, store, &format!("{prefix}.pw4"), h, 1)?;
    g.add(y, h)
}

/// Gated block with the local depthwise mixer.
pub fn naf_block<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, cfg: &BlockConfig, x: Var) -> Result<Var> {
    gated_block(g, store, prefix, &BlockConfig { mixer: Mixer::LocalDw, ..*cfg }, x)
}

/// Gated block with the large-small dynamic mixer.
pub fn lsg_block<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, cfg: &BlockConfig, x: Var) -> Result<Var> {
    gated_block(g, store, prefix, &BlockConfig { mixer: Mixer::LsConv, ..*cfg }, x)
}
