//! U-shaped encoder/decoder of gated blocks with a global residual.
//!
//! Downsampling is space-to-depth followed by a pointwise projection to twice
//! the channels (a stride-2 2x2 convolution); upsampling is a pointwise
//! projection to twice the channels followed by depth-to-space.

use rand::Rng;

use super::block::{gated_block, init_block, BlockConfig};
use super::{conv, init_conv};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub width: usize,
    pub enc_blocks: Vec<usize>,
    pub middle_blocks: usize,
    pub dec_blocks: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Block settings; `channels` is overridden per level.
    pub block: BlockConfig,
}

impl BackboneConfig {
    pub fn levels(&self) -> usize {
        self.enc_blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_blocks.len() != self.dec_blocks.len() {
            return Err(Error::Config(format!(
                "encoder has {} levels but decoder has {}",
                self.enc_blocks.len(),
                self.dec_blocks.len()
            )));
        }
        if self.in_channels != self.out_channels {
            return Err(Error::Config("global residual needs in_channels == out_channels".into()));
        }
        for level in 0..=self.levels() {
            self.block_at(level).validate()?;
        }
        Ok(())
    }

    fn block_at(&self, level: usize) -> BlockConfig {
        BlockConfig { channels: self.width << level, ..self.block }
    }
}

pub fn init_backbone<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: &BackboneConfig, rng: &mut impl Rng) -> Result<()> {
    cfg.validate()?;
    init_conv(store, &format!("{prefix}.intro"), cfg.width, cfg.in_channels, 3, rng)?;
    for (lvl, &n) in cfg.enc_blocks.iter().enumerate() {
        let bc = cfg.block_at(lvl);
        for b in 0..n {
            init_block(store, &format!("{prefix}.enc{lvl}.b{b}"), &bc, rng)?;
        }
        let c = bc.channels;
        init_conv(store, &format!("{prefix}.down{lvl}"), 2 * c, 4 * c, 1, rng)?;
    }
    let mid = cfg.block_at(cfg.levels());
    for b in 0..cfg.middle_blocks {
        init_block(store, &format!("{prefix}.mid.b{b}"), &mid, rng)?;
    }
    for (lvl, &n) in cfg.dec_blocks.iter().enumerate() {
        let c_in = cfg.width << (lvl + 1);
        init_conv(store, &format!("{prefix}.up{lvl}"), 2 * c_in, c_in, 1, rng)?;
        let bc = cfg.block_at(lvl);
        for b in 0..n {
            init_block(store, &format!("{prefix}.dec{lvl}.b{b}"), &bc, rng)?;
        }
    }
    // Zero final projection: the backbone starts as the identity map.
    store.insert(format!("{prefix}.ending.weight"), Tensor::zeros(&[cfg.out_channels, cfg.width, 3, 3]))?;
    store.insert(format!("{prefix}.ending.bias"), Tensor::zeros(&[cfg.out_channels]))
}

/// The learned correction alone, without the global residual.
pub fn backbone_correction<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    cfg: &BackboneConfig,
    x: Var,
) -> Result<Var> {
    cfg.validate()?;
    let shape = g.shape(x).to_vec();
    let factor = 1usize << cfg.levels();
    if shape.len() != 4 || shape[1] != cfg.in_channels {
        return Err(shape_err!("backbone expects [N,{},H,W], got {shape:?}", cfg.in_channels));
    }
    if !shape[2].is_multiple_of(factor) || !shape[3].is_multiple_of(factor) {
        return Err(shape_err!("spatial size {}x{} not divisible by {factor}", shape[2], shape[3]));
    }
    let mut h = conv(g, store, &format!("{prefix}.intro"), x, 1)?;
    let mut skips = Vec::with_capacity(cfg.levels());
    for (lvl, &n) in cfg.enc_blocks.iter().enumerate() {
        let bc = cfg.block_at(lvl);
        for b in 0..n {
            h = gated_block(g, store, &format!("{prefix}.enc{lvl}.b{b}"), &bc, h)?;
        }
        skips.push(h);
        let packed = g.space_to_depth(h)?;
        h = conv(g, store, &format!("{prefix}.down{lvl}"), packed, 1)?;
    }
    let mid = cfg.block_at(cfg.levels());
    for b in 0..cfg.middle_blocks {
        h = gated_block(g, store, &format!("{prefix}.mid.b{b}"), &mid, h)?;
    }
    for lvl in (0..cfg.levels()).rev() {
        let expanded = conv(g, store, &format!("{prefix}.up{lvl}"), h, 1)?;
        let up = g.depth_to_space(expanded)?;
        h = g.add(up, skips[lvl])?;
        let bc = cfg.block_at(lvl);
        for b in 0..cfg.dec_blocks[lvl] {
            h = gated_block(g, store, &format!("{prefix}.dec{lvl}.b{b}"), &bc, h)?;
        }
    }
    conv(g, store, &format!("{prefix}.ending"), h, 1)
}

/// `x + correction(x)`.
pub fn backbone_forward<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, cfg: &BackboneConfig, x: Var) -> Result<Var> {
    let corr = backbone_correction(g, store, prefix, cfg, x)?;
    g.add(x, corr)
}
