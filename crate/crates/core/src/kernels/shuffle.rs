//! Depth-to-space and space-to-depth rearrangements by a factor of 2.
//!
//! Channel `c * 4 + i * 2 + j` of the packed tensor holds pixel
//! `(2y + i, 2x + j)` of unpacked channel `c`.

use super::nchw;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `[N,C,H,W] -> [N,4C,H/2,W/2]`
pub fn space_to_depth<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw(x.shape(), "space_to_depth")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("space_to_depth needs even spatial size, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let d = x.data();
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            for i in 0..2 {
                for j in 0..2 {
                    let oc = ch * 4 + i * 2 + j;
                    let obase = (s * 4 * c + oc) * ho * wo;
                    let ibase = (s * c + ch) * h * w;
                    for y in 0..ho {
                        for xx in 0..wo {
                            out[obase + y * wo + xx] = d[ibase + (2 * y + i) * w + 2 * xx + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, 4 * c, ho, wo], out)
}

/// `[N,4C,H,W] -> [N,C,2H,2W]`
pub fn depth_to_space<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c4, h, w) = nchw(x.shape(), "depth_to_space")?;
    if c4 % 4 != 0 {
        return Err(shape_err!("depth_to_space needs channels divisible by 4, got {c4}"));
    }
    let c = c4 / 4;
    let (ho, wo) = (h * 2, w * 2);
    let d = x.data();
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            for i in 0..2 {
                for j in 0..2 {
                    let ic = ch * 4 + i * 2 + j;
                    let ibase = (s * c4 + ic) * h * w;
                    let obase = (s * c + ch) * ho * wo;
                    for y in 0..h {
                        for xx in 0..w {
                            out[obase + (2 * y + i) * wo + 2 * xx + j] = d[ibase + y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}
