//! Forward and adjoint kernels for the differentiable operators.
//!
//! These work on plain tensors; `autodiff::Graph` wires them onto the tape.

pub mod conv;
pub mod dynconv;
pub mod norm;
pub mod shuffle;

use crate::error::{shape_err, Result};

pub(crate) fn nchw(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(shape_err!("{what}: expected [N,C,H,W], got {shape:?}")),
    }
}

/// Valid output range `[lo, hi)` along one axis for tap offset `d`.
#[inline]
pub(crate) fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { len.saturating_sub(d as usize) } else { len };
    (lo.min(hi), hi)
}
