//! Gated restoration blocks and the U-shaped backbone built from them.

mod backbone;
mod block;
mod lsconv;

pub use backbone::{backbone_correction, backbone_forward, init_backbone, BackboneConfig};
pub use block::{gated_block, init_block, lsg_block, naf_block, simple_gate, BlockConfig, Mixer};
pub use lsconv::{init_lsconv, lsconv, lsconv_aggregate, lsconv_weights, LsConvConfig};

use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// `prefix.weight` / `prefix.bias` convolution parameters.
pub(crate) fn init_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cout: usize,
    cin_per_group: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.insert_uniform(format!("{prefix}.weight"), &[cout, cin_per_group, k, k], cin_per_group * k * k, rng)?;
    store.insert(format!("{prefix}.bias"), crate::Tensor::zeros(&[cout]))
}

pub(crate) fn conv<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, prefix: &str, x: Var, groups: usize) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    g.conv2d(x, w, Some(b), groups)
}
