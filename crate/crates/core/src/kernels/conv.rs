//! Grouped 2D cross-correlation, stride 1, zero "same" padding.

use super::{nchw, valid_range};
use crate::error::{shape_err, Error, Result};
use crate::scalar::{axpy, dot, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    groups: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
}

pub(crate) fn check<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    groups: usize,
) -> Result<ConvGeom> {
    let (n, cin, h, w) = nchw(x.shape(), "conv2d input")?;
    let (cout, cin_g, kh, kw) = nchw(weight.shape(), "conv2d weight")?;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Unsupported(format!("conv2d needs odd kernels, got {kh}x{kw}")));
    }
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(shape_err!("conv2d: groups={groups} must divide C_in={cin} and C_out={cout}"));
    }
    if cin_g != cin / groups {
        return Err(shape_err!("conv2d: weight expects {cin_g} input channels per group, input has {}", cin / groups));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(shape_err!("conv2d: bias shape {:?}, expected [{cout}]", b.shape()));
        }
    }
    Ok(ConvGeom { n, cin, cout, h, w, kh, kw, groups })
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    groups: usize,
) -> Result<Tensor<T>> {
    let g = check(x, weight, bias, groups)?;
    let hw = g.h * g.w;
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    for n in 0..g.n {
        for co in 0..g.cout {
            let grp = co / g.cout_g();
            let oplane = &mut out[(n * g.cout + co) * hw..(n * g.cout + co + 1) * hw];
            if let Some(b) = bias {
                let bv = b.data()[co];
                oplane.iter_mut().for_each(|v| *v = bv);
            }
            for cig in 0..g.cin_g() {
                let ci = grp * g.cin_g() + cig;
                let iplane = &xd[(n * g.cin + ci) * hw..(n * g.cin + ci + 1) * hw];
                let wbase = (co * g.cin_g() + cig) * g.kh * g.kw;
                if g.kh == 1 && g.kw == 1 {
                    axpy(wd[wbase], iplane, oplane);
                    continue;
                }
                for ky in 0..g.kh {
                    let dy = ky as isize - ph;
                    let (y0, y1) = valid_range(g.h, dy);
                    for kx in 0..g.kw {
                        let wv = wd[wbase + ky * g.kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let dx = kx as isize - pw;
                        let (x0, x1) = valid_range(g.w, dx);
                        for oy in y0..y1 {
                            let iy = (oy as isize + dy) as usize;
                            let orow = &mut oplane[oy * g.w + x0..oy * g.w + x1];
                            let ix0 = (x0 as isize + dx) as usize;
                            let irow = &iplane[iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0)];
                            axpy(wv, irow, orow);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[g.n, g.cout, g.h, g.w], out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Adjoint of [`conv2d`] with respect to each requested argument.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    groups: usize,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = check(x, weight, None, groups)?;
    if grad_out.shape() != [g.n, g.cout, g.h, g.w] {
        return Err(shape_err!("conv2d backward: grad shape {:?}", grad_out.shape()));
    }
    let hw = g.h * g.w;
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut gx = if need[0] { Some(vec![T::zero(); x.len()]) } else { None };
    let mut gw = if need[1] { Some(vec![T::zero(); weight.len()]) } else { None };
    for n in 0..g.n {
        for co in 0..g.cout {
            let grp = co / g.cout_g();
            let gplane = &gd[(n * g.cout + co) * hw..(n * g.cout + co + 1) * hw];
            for cig in 0..g.cin_g() {
                let ci = grp * g.cin_g() + cig;
                let ioff = (n * g.cin + ci) * hw;
                let iplane = &xd[ioff..ioff + hw];
                let wbase = (co * g.cin_g() + cig) * g.kh * g.kw;
                if g.kh == 1 && g.kw == 1 {
                    if let Some(gx) = gx.as_mut() {
                        axpy(wd[wbase], gplane, &mut gx[ioff..ioff + hw]);
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[wbase] = gw[wbase] + dot(gplane, iplane);
                    }
                    continue;
                }
                for ky in 0..g.kh {
                    let dy = ky as isize - ph;
                    let (y0, y1) = valid_range(g.h, dy);
                    for kx in 0..g.kw {
                        let dx = kx as isize - pw;
                        let (x0, x1) = valid_range(g.w, dx);
                        let ix0 = (x0 as isize + dx) as usize;
                        let wv = wd[wbase + ky * g.kw + kx];
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let iy = (oy as isize + dy) as usize;
                            let grow = &gplane[oy * g.w + x0..oy * g.w + x1];
                            let irange = ioff + iy * g.w + ix0..ioff + iy * g.w + ix0 + (x1 - x0);
                            if let Some(gx) = gx.as_mut() {
                                axpy(wv, grow, &mut gx[irange.clone()]);
                            }
                            if gw.is_some() {
                                acc = acc + dot(grow, &xd[irange]);
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            let k = wbase + ky * g.kw + kx;
                            gw[k] = gw[k] + acc;
                        }
                    }
                }
            }
        }
    }
    let gb = if need[2] {
        let mut b = vec![T::zero(); g.cout];
        for n in 0..g.n {
            for (co, bv) in b.iter_mut().enumerate() {
                *bv = *bv + crate::scalar::sum(&gd[(n * g.cout + co) * hw..(n * g.cout + co + 1) * hw]);
            }
        }
        Some(Tensor::new(&[g.cout], b)?)
    } else {
        None
    };
    Ok(ConvGrads {
        input: gx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
        weight: gw.map(|d| Tensor::new(weight.shape(), d)).transpose()?,
        bias: gb,
    })
}
