//! Independent oracles shared by the integration tests. Everything here is
//! written with plain loops over `f64` and never calls the kernels it checks.

#![allow(dead_code)]

use std::f64::consts::PI;

use mrimix::autodiff::{Graph, ParamStore, Var};
use mrimix::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, for ops with a kink at 0.
pub fn random_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.2..1.0);
        if rng.random_bool(0.5) { v } else { -v }
    })
}

/// `Σ conj(a) b` over interleaved complex data, as `(re, im)`.
pub fn cdot(a: &Tensor<f64>, b: &Tensor<f64>) -> (f64, f64) {
    let (mut re, mut im) = (0.0, 0.0);
    for (p, q) in a.data().chunks(2).zip(b.data().chunks(2)) {
        re += p[0] * q[0] + p[1] * q[1];
        im += p[0] * q[1] - p[1] * q[0];
    }
    (re, im)
}

pub fn rel_err(a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let s = (a.0 * a.0 + a.1 * a.1).sqrt().max((b.0 * b.0 + b.1 * b.1).sqrt());
    if s == 0.0 { d } else { d / s }
}

/// Centered orthonormal DFT of one `[H,W,2]` image written as two 1-D
/// matrix products with explicit shift permutations.
pub fn centered_dft(x: &Tensor<f64>, inverse: bool) -> Tensor<f64> {
    let s = x.shape();
    let (h, w) = (s[s.len() - 3], s[s.len() - 2]);
    let sign = if inverse { 1.0 } else { -1.0 };
    let batch = x.len() / (h * w * 2);
    // ifftshift moves index i to (i + n - n/2) % n ... fftshift is its inverse
    let ishift = |i: usize, n: usize| (i + n - n / 2) % n;
    let fshift = |i: usize, n: usize| (i + n / 2) % n;
    let dft1 = |v: &[(f64, f64)]| -> Vec<(f64, f64)> {
        let n = v.len();
        let mut src = vec![(0.0, 0.0); n];
        for (i, &z) in v.iter().enumerate() {
            src[ishift(i, n)] = z;
        }
        let mut out = vec![(0.0, 0.0); n];
        for (k, o) in out.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &(a, b)) in src.iter().enumerate() {
                let ph = sign * 2.0 * PI * (k * j) as f64 / n as f64;
                re += a * ph.cos() - b * ph.sin();
                im += a * ph.sin() + b * ph.cos();
            }
            *o = (re / (n as f64).sqrt(), im / (n as f64).sqrt());
        }
        let mut shifted = vec![(0.0, 0.0); n];
        for (k, &z) in out.iter().enumerate() {
            shifted[fshift(k, n)] = z;
        }
        shifted
    };
    let mut out = x.clone();
    let d = out.data_mut();
    for b in 0..batch {
        let at = |y: usize, xx: usize| b * h * w * 2 + (y * w + xx) * 2;
        for y in 0..h {
            let row: Vec<_> = (0..w).map(|xx| (d[at(y, xx)], d[at(y, xx) + 1])).collect();
            for (xx, z) in dft1(&row).into_iter().enumerate() {
                d[at(y, xx)] = z.0;
                d[at(y, xx) + 1] = z.1;
            }
        }
        for xx in 0..w {
            let col: Vec<_> = (0..h).map(|y| (d[at(y, xx)], d[at(y, xx) + 1])).collect();
            for (y, z) in dft1(&col).into_iter().enumerate() {
                d[at(y, xx)] = z.0;
                d[at(y, xx) + 1] = z.1;
            }
        }
    }
    out
}

fn pixel(x: &Tensor<f64>, n: usize, c: usize, y: isize, xx: isize) -> f64 {
    let s = x.shape();
    if y < 0 || xx < 0 || y >= s[2] as isize || xx >= s[3] as isize {
        0.0
    } else {
        x.get(&[n, c, y as usize, xx as usize])
    }
}

/// Grouped "same" cross-correlation, quadruple loop.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&Tensor<f64>>, groups: usize) -> Tensor<f64> {
    let (n, _, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, cig, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let per = co / groups;
    Tensor::from_fn(&[n, co, h, wd], |i| {
        let (b, o, y, xx) = (i[0], i[1], i[2] as isize, i[3] as isize);
        let grp = o / per;
        let mut acc = bias.map_or(0.0, |t| t.data()[o]);
        for c in 0..cig {
            for u in 0..kh {
                for v in 0..kw {
                    let iy = y + u as isize - (kh / 2) as isize;
                    let ix = xx + v as isize - (kw / 2) as isize;
                    acc += w.get(&[o, c, u, v]) * pixel(x, b, grp * cig + c, iy, ix);
                }
            }
        }
        acc
    })
}

/// Position-dependent grouped aggregation: five nested loops
/// (batch, channel, position, tap row, tap column).
pub fn naive_aggregate(x: &Tensor<f64>, k: &Tensor<f64>, groups: usize, ks: usize) -> Tensor<f64> {
    let s = x.shape().to_vec();
    let per = s[1] / groups;
    let r = (ks / 2) as isize;
    let mut out = Tensor::zeros(&s);
    for b in 0..s[0] {
        for c in 0..s[1] {
            let grp = c / per;
            for y in 0..s[2] {
                for xx in 0..s[3] {
                    let mut acc = 0.0;
                    for u in 0..ks {
                        for v in 0..ks {
                            let tap = grp * ks * ks + u * ks + v;
                            let iy = y as isize + u as isize - r;
                            let ix = xx as isize + v as isize - r;
                            acc += k.get(&[b, tap, y, xx]) * pixel(x, b, c, iy, ix);
                        }
                    }
                    out.set(&[b, c, y, xx], acc);
                }
            }
        }
    }
    out
}

/// SSIM of one window given raw sample slices.
fn window_ssim(a: &[f64], b: &[f64], range: f64) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / (n - 1.0);
    let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (n - 1.0);
    let cov = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / (n - 1.0);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Per-window SSIM values of slice `s` of two `[S,H,W]` stacks (7x7, valid).
pub fn window_values(a: &Tensor<f64>, b: &Tensor<f64>, s: usize, range: f64) -> Vec<f64> {
    let (h, w) = (a.shape()[1], a.shape()[2]);
    let mut vals = Vec::new();
    for y in 0..=h - 7 {
        for x in 0..=w - 7 {
            let mut pa = Vec::with_capacity(49);
            let mut pb = Vec::with_capacity(49);
            for u in 0..7 {
                for v in 0..7 {
                    pa.push(a.get(&[s, y + u, x + v]));
                    pb.push(b.get(&[s, y + u, x + v]));
                }
            }
            vals.push(window_ssim(&pa, &pb, range));
        }
    }
    vals
}

pub fn brute_ssim_2d(a: &Tensor<f64>, b: &Tensor<f64>, range: f64) -> f64 {
    let a3 = a.reshape(&[1, a.shape()[0], a.shape()[1]]).unwrap();
    let b3 = b.reshape(&[1, b.shape()[0], b.shape()[1]]).unwrap();
    let v = window_values(&a3, &b3, 0, range);
    v.iter().sum::<f64>() / v.len() as f64
}

fn slice_max(r: &Tensor<f64>, s: usize) -> f64 {
    let (h, w) = (r.shape()[1], r.shape()[2]);
    (0..h * w).map(|i| r.data()[s * h * w + i]).fold(f64::MIN, f64::max)
}

pub fn brute_slice_wise(r: &Tensor<f64>, e: &Tensor<f64>) -> f64 {
    let n = r.shape()[0];
    (0..n)
        .map(|s| {
            let v = window_values(r, e, s, slice_max(r, s));
            v.iter().sum::<f64>() / v.len() as f64
        })
        .sum::<f64>()
        / n as f64
}

pub fn brute_volumetric(r: &Tensor<f64>, e: &Tensor<f64>) -> f64 {
    let range = r.data().iter().cloned().fold(f64::MIN, f64::max);
    let all: Vec<f64> = (0..r.shape()[0]).flat_map(|s| window_values(r, e, s, range)).collect();
    all.iter().sum::<f64>() / all.len() as f64
}

/// Outcome of [`fd_check`]: worst norm-wise relative error and the tensor
/// where it occurred.
#[derive(Debug)]
pub struct FdResult {
    pub max_rel: f64,
    pub worst: String,
}

/// Central-difference check of every input leaf and every parameter in
/// `store` for the scalar `Σ w ⊙ build(...)` with fixed random `w`.
/// At most `max_entries` evenly spaced entries are probed per tensor.
pub fn fd_check(
    inputs: &[Tensor<f64>],
    store: &ParamStore<f64>,
    build: &dyn Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
    max_entries: usize,
) -> FdResult {
    let h = 1e-4;
    let run = |inputs: &[Tensor<f64>], store: &ParamStore<f64>| {
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, store, &leaves).expect("forward");
        let mut wr = rng(0xfd);
        let w = random(g.shape(out), &mut wr);
        let wv = g.constant(w);
        let p = g.mul(out, wv).unwrap();
        let l = g.sum(p);
        (g, leaves, l)
    };
    let loss = |inputs: &[Tensor<f64>], store: &ParamStore<f64>| {
        let (g, _, l) = run(inputs, store);
        g.value(l).item()
    };
    let (g, leaves, l) = run(inputs, store);
    let grads = g.backward(l, store).expect("backward");
    let probes = |n: usize| -> Vec<usize> {
        if n <= max_entries { (0..n).collect() } else { (0..max_entries).map(|i| i * n / max_entries).collect() }
    };
    let norm_rel = |a: &[f64], b: &[f64]| {
        let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let s = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if s < 1e-12 { d } else { d / s }
    };
    let mut res = FdResult { max_rel: 0.0, worst: String::new() };
    for (i, leaf) in leaves.iter().enumerate() {
        let an = grads.wrt(*leaf).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for j in probes(inputs[i].len()) {
            let mut p = inputs.to_vec();
            p[i].data_mut()[j] += h;
            let mut m = inputs.to_vec();
            m[i].data_mut()[j] -= h;
            n.push((loss(&p, store) - loss(&m, store)) / (2.0 * h));
            a.push(an.data()[j]);
        }
        let e = norm_rel(&a, &n);
        if e >= res.max_rel {
            res = FdResult { max_rel: e, worst: format!("input {i}") };
        }
    }
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let an = grads.params()[&name].clone();
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for j in probes(an.len()) {
            let mut s = store.clone();
            s.get_mut(&name).unwrap().data_mut()[j] += h;
            let lp = loss(inputs, &s);
            s.get_mut(&name).unwrap().data_mut()[j] -= 2.0 * h;
            let lm = loss(inputs, &s);
            n.push((lp - lm) / (2.0 * h));
            a.push(an.data()[j]);
        }
        let e = norm_rel(&a, &n);
        if e >= res.max_rel {
            res = FdResult { max_rel: e, worst: name };
        }
    }
    res
}

/// Perturbs every parameter around its role's natural value.
pub fn jitter_params(store: &mut ParamStore<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    for (name, t) in store.iter_mut() {
        let center = if name.ends_with(".gamma") || name.contains(".mu") { 1.0 } else { 0.0 };
        t.data_mut().iter_mut().for_each(|v| *v = center + scale * rng.random_range(-1.0..1.0));
    }
}
