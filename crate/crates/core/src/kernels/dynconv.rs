//! Position-dependent grouped aggregation.
//!
//! Every location carries its own `G` small kernels of `K x K` taps. Channel
//! `c` belongs to group `c / (C / G)` and is aggregated over its `K x K`
//! neighbourhood with that group's kernel. Tap `(u, v)` of group `g` is
//! stored at weight channel `g * K * K + u * K + v`.

use super::{nchw, valid_range};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, groups: usize, k: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, wd) = nchw(x.shape(), "dynamic aggregation input")?;
    if k.is_multiple_of(2) {
        return Err(crate::error::Error::Unsupported(format!("dynamic kernel size {k} must be odd")));
    }
    if groups == 0 || c % groups != 0 {
        return Err(shape_err!("dynamic aggregation: groups={groups} must divide C={c}"));
    }
    if w.shape() != [n, groups * k * k, h, wd] {
        return Err(shape_err!(
            "dynamic aggregation: weights {:?}, expected {:?}",
            w.shape(),
            [n, groups * k * k, h, wd]
        ));
    }
    Ok((n, c, h, wd))
}

pub fn aggregate<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, groups: usize, k: usize) -> Result<Tensor<T>> {
    let (n, c, h, wd) = check(x, w, groups, k)?;
    let hw = h * wd;
    let cpg = c / groups;
    let r = (k / 2) as isize;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let g = ch / cpg;
            let xoff = (s * c + ch) * hw;
            for u in 0..k {
                let dy = u as isize - r;
                let (y0, y1) = valid_range(h, dy);
                for v in 0..k {
                    let dx = v as isize - r;
                    let (x0, x1) = valid_range(wd, dx);
                    let woff = (s * groups * k * k + g * k * k + u * k + v) * hw;
                    for oy in y0..y1 {
                        let iy = (oy as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        let orow = &mut out[xoff + oy * wd + x0..xoff + oy * wd + x1];
                        let wrow = &wdat[woff + oy * wd + x0..woff + oy * wd + x1];
                        let irow = &xd[xoff + iy * wd + ix0..xoff + iy * wd + ix0 + (x1 - x0)];
                        for ((o, &a), &b) in orow.iter_mut().zip(wrow).zip(irow) {
                            *o = *o + a * b;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Returns `(grad_x, grad_w)`.
pub fn aggregate_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    groups: usize,
    k: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, wd) = check(x, w, groups, k)?;
    if grad_out.shape() != x.shape() {
        return Err(shape_err!("dynamic aggregation backward: grad {:?}", grad_out.shape()));
    }
    let hw = h * wd;
    let cpg = c / groups;
    let r = (k / 2) as isize;
    let (xd, wdat, gd) = (x.data(), w.data(), grad_out.data());
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    for s in 0..n {
        for ch in 0..c {
            let g = ch / cpg;
            let xoff = (s * c + ch) * hw;
            for u in 0..k {
                let dy = u as isize - r;
                let (y0, y1) = valid_range(h, dy);
                for v in 0..k {
                    let dx = v as isize - r;
                    let (x0, x1) = valid_range(wd, dx);
                    let woff = (s * groups * k * k + g * k * k + u * k + v) * hw;
                    for oy in y0..y1 {
                        let iy = (oy as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        let len = x1 - x0;
                        let grow = &gd[xoff + oy * wd + x0..xoff + oy * wd + x1];
                        let wrow = &wdat[woff + oy * wd + x0..woff + oy * wd + x1];
                        let irange = xoff + iy * wd + ix0..xoff + iy * wd + ix0 + len;
                        for ((gxv, &a), &b) in gx[irange.clone()].iter_mut().zip(wrow).zip(grow) {
                            *gxv = *gxv + a * b;
                        }
                        let gwrow = &mut gw[woff + oy * wd + x0..woff + oy * wd + x1];
                        for ((gwv, &a), &b) in gwrow.iter_mut().zip(grow).zip(&xd[irange]) {
                            *gwv = *gwv + a * b;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(x.shape(), gx)?, Tensor::new(w.shape(), gw)?))
}

/// Softmax over the `taps` entries of each group at every location.
pub fn tap_softmax<T: Scalar>(w: &Tensor<T>, taps: usize) -> Result<Tensor<T>> {
    let (n, ch, h, wd) = nchw(w.shape(), "tap softmax")?;
    if taps == 0 || ch % taps != 0 {
        return Err(shape_err!("tap softmax: {ch} channels not a multiple of {taps} taps"));
    }
    let hw = h * wd;
    let d = w.data();
    let mut out = vec![T::zero(); w.len()];
    for blk in 0..n * ch / taps {
        let base = blk * taps * hw;
        for p in 0..hw {
            let mut m = T::neg_infinity();
            for t in 0..taps {
                m = m.max(d[base + t * hw + p]);
            }
            let mut z = T::zero();
            for t in 0..taps {
                let e = (d[base + t * hw + p] - m).exp();
                out[base + t * hw + p] = e;
                z = z + e;
            }
            for t in 0..taps {
                out[base + t * hw + p] = out[base + t * hw + p] / z;
            }
        }
    }
    Tensor::new(w.shape(), out)
}

/// Adjoint of [`tap_softmax`] given its output `s`.
pub fn tap_softmax_backward<T: Scalar>(s: &Tensor<T>, grad_out: &Tensor<T>, taps: usize) -> Result<Tensor<T>> {
    let (n, ch, h, wd) = nchw(s.shape(), "tap softmax backward")?;
    let hw = h * wd;
    let (sd, gd) = (s.data(), grad_out.data());
    let mut out = vec![T::zero(); s.len()];
    for blk in 0..n * ch / taps {
        let base = blk * taps * hw;
        for p in 0..hw {
            let mut inner = T::zero();
            for t in 0..taps {
                inner = inner + sd[base + t * hw + p] * gd[base + t * hw + p];
            }
            for t in 0..taps {
                let i = base + t * hw + p;
                out[i] = sd[i] * (gd[i] - inner);
            }
        }
    }
    Tensor::new(s.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernels_reproduce_input() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 5, 5], |i| (i[1] * 31 + i[2] * 7 + i[3]) as f64 * 0.1);
        let k = 3;
        let w = Tensor::from_fn(&[1, 2 * k * k, 5, 5], |i| if i[1] % (k * k) == (k * k) / 2 { 1.0 } else { 0.0 });
        assert_eq!(aggregate(&x, &w, 2, k).unwrap(), x);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let w = Tensor::<f64>::from_fn(&[1, 18, 2, 3], |i| (i[1] as f64 * 0.37).sin() * 4.0 + i[3] as f64);
        let s = tap_softmax(&w, 9).unwrap();
        for g in 0..2 {
            for p in 0..6 {
                let tot: f64 = (0..9).map(|t| s.data()[(g * 9 + t) * 6 + p]).sum();
                assert!((tot - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 4, 5, 5]);
        assert!(aggregate(&x, &Tensor::zeros(&[1, 9, 5, 5]), 2, 3).is_err());
        assert!(aggregate(&x, &Tensor::zeros(&[1, 27, 5, 5]), 3, 3).is_err());
    }
}
