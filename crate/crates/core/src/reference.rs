//! Slow, direct implementations used to cross-check the fast kernels,
//! plus a finite-difference gradient checker.

use std::f64::consts::PI;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Centered orthonormal 2D DFT of `[..., H, W, 2]` by direct summation.
pub fn dft2c(x: &Tensor<f64>, inverse: bool) -> Result<Tensor<f64>> {
    let s = x.shape();
    if s.len() < 3 || s[s.len() - 1] != 2 {
        return Err(shape_err!("dft2c expects [..., H, W, 2], got {s:?}"));
    }
    let (h, w) = (s[s.len() - 3], s[s.len() - 2]);
    let batch = x.len() / (h * w * 2);
    let sign = if inverse { 1.0 } else { -1.0 };
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let (ch, cw) = ((h / 2) as f64, (w / 2) as f64);
    let d = x.data();
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let base = b * h * w * 2;
        for ky in 0..h {
            for kx in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for ny in 0..h {
                    for nx in 0..w {
                        let phase = sign
                            * 2.0
                            * PI
                            * ((ky as f64 - ch) * (ny as f64 - ch) / h as f64 + (kx as f64 - cw) * (nx as f64 - cw) / w as f64);
                        let (c, sn) = (phase.cos(), phase.sin());
                        let i = base + (ny * w + nx) * 2;
                        re += d[i] * c - d[i + 1] * sn;
                        im += d[i] * sn + d[i + 1] * c;
                    }
                }
                let o = base + (ky * w + kx) * 2;
                out[o] = re * norm;
                out[o + 1] = im * norm;
            }
        }
    }
    Tensor::new(s, out)
}

/// Grouped zero-padded "same" cross-correlation by direct summation.
pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&Tensor<f64>>, groups: usize) -> Result<Tensor<f64>> {
    let (n, cin, h, wd) = dims4(x)?;
    let (cout, cin_g, kh, kw) = dims4(w)?;
    if cin != cin_g * groups || cout % groups != 0 {
        return Err(shape_err!("conv2d oracle: incompatible shapes {:?} and {:?}", x.shape(), w.shape()));
    }
    let cout_g = cout / groups;
    let mut out = Tensor::zeros(&[n, cout, h, wd]);
    for b in 0..n {
        for co in 0..cout {
            let grp = co / cout_g;
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = bias.map_or(0.0, |b| b.data()[co]);
                    for cig in 0..cin_g {
                        let ci = grp * cin_g + cig;
                        for u in 0..kh {
                            for v in 0..kw {
                                let iy = y as isize + u as isize - (kh / 2) as isize;
                                let ix = xx as isize + v as isize - (kw / 2) as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.get(&[co, cig, u, v]) * x.get(&[b, ci, iy as usize, ix as usize]);
                            }
                        }
                    }
                    out.set(&[b, co, y, xx], acc);
                }
            }
        }
    }
    Ok(out)
}

/// Per-location grouped aggregation with `K x K` kernels: output channel
/// `c` at `(y, x)` is `sum_{u,v} w[g*K*K + u*K + v, y, x] * x[c, y+u-r, x+v-r]`.
pub fn dynamic_aggregate(x: &Tensor<f64>, w: &Tensor<f64>, groups: usize, k: usize) -> Result<Tensor<f64>> {
    let (n, c, h, wd) = dims4(x)?;
    if w.shape() != [n, groups * k * k, h, wd] || c % groups != 0 {
        return Err(shape_err!("aggregation oracle: incompatible shapes {:?} and {:?}", x.shape(), w.shape()));
    }
    let cpg = c / groups;
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let g = ch / cpg;
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = 0.0;
                    for u in 0..k {
                        for v in 0..k {
                            let iy = y as isize + u as isize - r;
                            let ix = xx as isize + v as isize - r;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            acc += w.get(&[b, g * k * k + u * k + v, y, xx]) * x.get(&[b, ch, iy as usize, ix as usize]);
                        }
                    }
                    out.set(&[b, ch, y, xx], acc);
                }
            }
        }
    }
    Ok(out)
}

fn dims4(t: &Tensor<f64>) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [a, b, c, d] => Ok((a, b, c, d)),
        ref s => Err(shape_err!("expected a 4D tensor, got {s:?}")),
    }
}

/// SSIM of one window given its two patches.
fn window_ssim(pa: &[f64], pb: &[f64], range: f64) -> f64 {
    let n = pa.len() as f64;
    let ma = pa.iter().sum::<f64>() / n;
    let mb = pb.iter().sum::<f64>() / n;
    let va = pa.iter().map(|a| (a - ma).powi(2)).sum::<f64>() / (n - 1.0);
    let vb = pb.iter().map(|b| (b - mb).powi(2)).sum::<f64>() / (n - 1.0);
    let cov = pa.iter().zip(pb).map(|(a, b)| (a - ma) * (b - mb)).sum::<f64>() / (n - 1.0);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Sum and count of window SSIMs over one `[H,W]` slice (row-major data).
fn slice_windows(a: &[f64], b: &[f64], h: usize, w: usize, win: usize, range: f64) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - win {
        for x in 0..=w - win {
            let mut pa = Vec::with_capacity(win * win);
            let mut pb = Vec::with_capacity(win * win);
            for dy in 0..win {
                for dx in 0..win {
                    pa.push(a[(y + dy) * w + x + dx]);
                    pb.push(b[(y + dy) * w + x + dx]);
                }
            }
            total += window_ssim(&pa, &pb, range);
            count += 1;
        }
    }
    (total, count)
}

/// Mean SSIM over all `win x win` windows of an `[H,W]` pair.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>, range: f64, win: usize) -> f64 {
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let (s, n) = slice_windows(a.data(), b.data(), h, w, win, range);
    s / n as f64
}

/// Slice-wise protocol on `[S,H,W]`: each slice with its own maximum.
pub fn ssim_slice_wise(r: &Tensor<f64>, e: &Tensor<f64>, win: usize) -> f64 {
    let [s, h, w] = [r.shape()[0], r.shape()[1], r.shape()[2]];
    let mut total = 0.0;
    for z in 0..s {
        let rs = &r.data()[z * h * w..(z + 1) * h * w];
        let es = &e.data()[z * h * w..(z + 1) * h * w];
        let max = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (sum, n) = slice_windows(rs, es, h, w, win, max);
        total += sum / n as f64;
    }
    total / s as f64
}

/// Volumetric protocol on `[S,H,W]`: every 2D window of every slice, one
/// data range (the volume maximum).
pub fn ssim_volumetric(r: &Tensor<f64>, e: &Tensor<f64>, win: usize) -> f64 {
    let [s, h, w] = [r.shape()[0], r.shape()[1], r.shape()[2]];
    let max = r.max();
    let (mut total, mut count) = (0.0, 0);
    for z in 0..s {
        let sl = z * h * w..(z + 1) * h * w;
        let (sum, n) = slice_windows(&r.data()[sl.clone()], &e.data()[sl], h, w, win, max);
        total += sum;
        count += n;
    }
    total / count as f64
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest norm-wise relative error `|analytic - numeric| / max(|analytic|, |numeric|)`
    /// over all checked tensors.
    pub max_rel_err: f64,
    /// Tensor attaining it.
    pub worst: String,
    pub checked_entries: usize,
}

/// Compares reverse-mode gradients of `build` against central differences.
///
/// `build` receives leaves for `inputs` and must return any tensor; the
/// scalar loss is its inner product with fixed pseudo-random weights.
/// Every parameter of `store` and every input is checked; `max_entries`
/// bounds the entries probed per tensor (evenly spaced).
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    store: &ParamStore<f64>,
    build: &dyn Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
    h: f64,
    max_entries: usize,
) -> Result<GradCheck> {
    let weights = |shape: &[usize]| {
        let mut state = 0x9e37_79b9_7f4a_7c15u64;
        Tensor::from_fn(shape, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    };
    let eval = |inputs: &[Tensor<f64>], store: &ParamStore<f64>| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, store, &leaves)?;
        let wv = g.constant(weights(g.shape(out)));
        let prod = g.mul(out, wv)?;
        let loss = g.sum(prod);
        Ok((g, leaves, loss))
    };
    let (g, leaves, loss) = eval(inputs, store)?;
    let grads = g.backward(loss, store)?;

    let probe = |len: usize| -> Vec<usize> {
        if len <= max_entries { (0..len).collect() } else { (0..max_entries).map(|i| i * len / max_entries).collect() }
    };
    let loss_at = |inputs: &[Tensor<f64>], store: &ParamStore<f64>| -> Result<f64> {
        let (g, _, l) = eval(inputs, store)?;
        Ok(g.value(l).item())
    };
    let rel = |a: &[f64], n: &[f64]| {
        let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale == 0.0 { 0.0 } else { diff / scale }
    };

    let mut res = GradCheck { max_rel_err: 0.0, worst: String::new(), checked_entries: 0 };
    let mut record = |name: String, a: Vec<f64>, n: Vec<f64>| {
        let e = rel(&a, &n);
        res.checked_entries += a.len();
        if e > res.max_rel_err || res.worst.is_empty() {
            res.max_rel_err = e.max(res.max_rel_err);
            res.worst = name;
        }
    };
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for j in probe(inputs[i].len()) {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            n.push((loss_at(&plus, store)? - loss_at(&minus, store)?) / (2.0 * h));
            a.push(analytic.data()[j]);
        }
        record(format!("input{i}"), a, n);
    }
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let analytic = grads.params()[&name].clone();
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for j in probe(analytic.len()) {
            let mut s = store.clone();
            s.get_mut(&name)?.data_mut()[j] += h;
            let lp = loss_at(inputs, &s)?;
            s.get_mut(&name)?.data_mut()[j] -= 2.0 * h;
            let lm = loss_at(inputs, &s)?;
            n.push((lp - lm) / (2.0 * h));
            a.push(analytic.data()[j]);
        }
        record(name, a, n);
    }
    Ok(res)
}
