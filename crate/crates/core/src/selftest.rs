//! Built-in invariant suite: operator adjoints, oracle agreement, gradient
//! checks and the cascade / degradation / metric identities. Runs in a few
//! seconds on small real64 problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore};
use crate::error::Result;
use crate::kernels;
use crate::metrics::{ssim_slice_wise, ssim_volumetric, SsimOptions, VolumePair};
use crate::mri::{self, generate_mask, make_coil_maps, CoilSensitivities, SamplingMask};
use crate::nn::{init_block, lsg_block, naf_block, BackboneConfig, BlockConfig, LsConvConfig, Mixer};
use crate::reference;
use crate::sim::degrade_sr;
use crate::tensor::Tensor;
use crate::unrolled::{init_unrolled, unroll_forward, UnrolledConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Replaces every parameter with random values (`gamma` near one).
pub fn randomize_params(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (name, t) in store.iter_mut() {
        let center = if name.ends_with(".gamma") || name.contains(".mu") { 1.0 } else { 0.0 };
        t.data_mut().iter_mut().for_each(|v| *v = center + rng.random_range(-0.5..0.5));
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn adjoints(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let (h, w) = (4 + trial % 5, 3 + trial % 6);
        let x = random(&[2, h, w, 2], rng);
        let y = random(&[2, h, w, 2], rng);
        let lhs = mri::inner(&mri::fft2c(&x)?, &y);
        let rhs = mri::inner(&x, &mri::ifft2c(&y)?);
        worst = worst.max(rel(lhs.re, rhs.re)).max(rel(lhs.im, rhs.im));
        let m = generate_mask(w, 2, 0.3, trial as u64)?;
        let lhs = mri::inner(&mri::apply_mask(&x, &m)?, &y);
        let rhs = mri::inner(&x, &mri::apply_mask(&y, &m)?);
        worst = worst.max(rel(lhs.re, rhs.re)).max(rel(lhs.im, rhs.im));
        let s: CoilSensitivities<f64> = make_coil_maps(3, h, w, trial as u64)?;
        let img = random(&[h, w, 2], rng);
        let coil = random(&[3, h, w, 2], rng);
        let lhs = mri::inner(&mri::expand(&img, &s)?, &coil);
        let rhs = mri::inner(&img, &mri::reduce(&coil, &s)?);
        worst = worst.max(rel(lhs.re, rhs.re)).max(rel(lhs.im, rhs.im));
    }
    Ok(worst)
}

fn fft_oracle(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(&[5, 6, 2], rng);
    let a = mri::fft2c(&x)?.max_abs_diff(&reference::dft2c(&x, false)?);
    let b = mri::ifft2c(&x)?.max_abs_diff(&reference::dft2c(&x, true)?);
    Ok(a.max(b))
}

fn kernel_oracles(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(&[2, 4, 6, 5], rng);
    let w = random(&[6, 2, 3, 3], rng);
    let b = random(&[6], rng);
    let conv = kernels::conv::conv2d(&x, &w, Some(&b), 2)?.max_abs_diff(&reference::conv2d(&x, &w, Some(&b), 2)?);
    let mut worst = conv;
    for groups in [1, 2, 4] {
        let x = random(&[2, 8, 6, 6], rng);
        let dw = random(&[2, groups * 9, 6, 6], rng);
        let fast = kernels::dynconv::aggregate(&x, &dw, groups, 3)?;
        worst = worst.max(fast.max_abs_diff(&reference::dynamic_aggregate(&x, &dw, groups, 3)?));
    }
    Ok(worst)
}

fn delta_kernel_identity(rng: &mut ChaCha8Rng) -> Result<bool> {
    let x = random(&[1, 4, 5, 5], rng);
    let mut w = Tensor::zeros(&[1, 2 * 9, 5, 5]);
    for g in 0..2 {
        for y in 0..5 {
            for xx in 0..5 {
                w.set(&[0, g * 9 + 4, y, xx], 1.0);
            }
        }
    }
    Ok(kernels::dynconv::aggregate(&x, &w, 2, 3)? == x)
}

fn simple_gate_identity(rng: &mut ChaCha8Rng) -> Result<bool> {
    let a = random(&[1, 3, 4, 4], rng);
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let ones = g.constant(Tensor::ones(&[1, 3, 4, 4]));
    let z = g.concat(&[av, ones], 1)?;
    let y = crate::nn::simple_gate(&mut g, z)?;
    Ok(*g.value(y) == a)
}

fn op_gradients(rng: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let empty = ParamStore::new();
    let mut worst = (0.0, String::new());
    let mut note = |name: &str, e: f64| {
        if e >= worst.0 {
            worst = (e, name.to_string());
        }
    };
    let x = random(&[1, 4, 5, 5], rng);
    let r = reference::check_gradients(
        &[x.clone(), random(&[4, 2, 3, 3], rng), random(&[4], rng)],
        &empty,
        &|g, _, v| g.conv2d(v[0], v[1], Some(v[2]), 2),
        1e-4,
        64,
    )?;
    note("conv2d", r.max_rel_err);
    let r = reference::check_gradients(
        &[x.clone(), random(&[4], rng), random(&[4], rng)],
        &empty,
        &|g, _, v| g.layer_norm(v[0], v[1], v[2], 1e-6),
        1e-4,
        64,
    )?;
    note("layer_norm", r.max_rel_err);
    let r = reference::check_gradients(
        &[x.clone(), random(&[1, 18, 5, 5], rng)],
        &empty,
        &|g, _, v| {
            let w = g.tap_softmax(v[1], 9)?;
            g.dynamic_aggregate(v[0], w, 2, 3)
        },
        1e-4,
        64,
    )?;
    note("dynamic_aggregate+tap_softmax", r.max_rel_err);
    let s: CoilSensitivities<f64> = make_coil_maps(2, 4, 6, 3)?;
    let m = generate_mask(6, 2, 0.3, 5)?;
    let r = reference::check_gradients(
        &[random(&[4, 6, 2], rng)],
        &empty,
        &|g, _, v| {
            let e = g.expand(v[0], &s)?;
            let k = g.fft2c(e)?;
            let k = g.apply_mask(k, &m)?;
            let i = g.ifft2c(k)?;
            let r = g.reduce(i, &s)?;
            g.complex_abs(r)
        },
        1e-4,
        64,
    )?;
    note("mri chain", r.max_rel_err);
    Ok(worst)
}

fn block_gradients(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for mixer in [Mixer::LocalDw, Mixer::LsConv] {
        let cfg = BlockConfig {
            lsconv: LsConvConfig { kl: 5, ks: 3, groups: 2, normalize_kernels: false },
            channel_attention: true,
            ..BlockConfig::new(4, mixer)
        };
        let mut store = ParamStore::new();
        init_block(&mut store, "b", &cfg, rng)?;
        randomize_params(&mut store, rng);
        let x = random(&[1, 4, 5, 5], rng);
        let r = reference::check_gradients(
            &[x],
            &store,
            &|g, s, v| match mixer {
                Mixer::LocalDw => naf_block(g, s, "b", &cfg, v[0]),
                Mixer::LsConv => lsg_block(g, s, "b", &cfg, v[0]),
            },
            1e-4,
            12,
        )?;
        worst = worst.max(r.max_rel_err);
    }
    Ok(worst)
}

fn small_backbone() -> BackboneConfig {
    BackboneConfig {
        width: 4,
        enc_blocks: vec![1],
        middle_blocks: 1,
        dec_blocks: vec![1],
        in_channels: 2,
        out_channels: 2,
        block: BlockConfig::new(4, Mixer::LocalDw),
    }
}

fn cascade_gradients(rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = UnrolledConfig { iterations: 2, ..UnrolledConfig::new(small_backbone()) };
    let mut store = ParamStore::new();
    init_unrolled(&mut store, "c", &cfg, rng)?;
    randomize_params(&mut store, rng);
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= 0.5);
    }
    let m = generate_mask(8, 2, 0.25, 1)?;
    let s = CoilSensitivities::uniform(8, 8);
    let k = mri::apply_mask(&random(&[1, 8, 8, 2], rng), &m)?;
    let r = reference::check_gradients(
        &[k],
        &store,
        &|g, st, v| {
            let x = unroll_forward(g, st, "c", &cfg, v[0], &m, &s)?;
            g.complex_abs(x)
        },
        1e-4,
        6,
    )?;
    Ok(r.max_rel_err)
}

fn dc_fixed_point(rng: &mut ChaCha8Rng) -> Result<bool> {
    let cfg = UnrolledConfig { iterations: 1, fixed_mu: true, ..UnrolledConfig::new(small_backbone()) };
    let mut store = ParamStore::new();
    init_unrolled(&mut store, "c", &cfg, rng)?;
    let m = generate_mask(8, 4, 0.25, 2)?;
    let s: CoilSensitivities<f64> = make_coil_maps(2, 8, 8, 4)?;
    let x = random(&[8, 8, 2], rng);
    let km = mri::apply_mask(&mri::fft2c(&mri::expand(&x, &s)?)?, &m)?;
    let mut g = Graph::new();
    let kv = g.constant(km.clone());
    let states = crate::unrolled::unroll_states(&mut g, &store, "c", &cfg, kv, &m, &s)?;
    let k1 = g.value(states[1]);
    Ok(mri::apply_mask(k1, &m)? == km)
}

fn full_mask_recovers_image(rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = UnrolledConfig { iterations: 3, ..UnrolledConfig::new(small_backbone()) };
    let mut store = ParamStore::new();
    init_unrolled(&mut store, "c", &cfg, rng)?;
    let m = SamplingMask::full(8);
    let s: CoilSensitivities<f64> = CoilSensitivities::uniform(8, 8);
    let x = random(&[8, 8, 2], rng);
    let km = mri::fft2c(&mri::expand(&x, &s)?)?;
    let mut g = Graph::new();
    let kv = g.constant(km);
    let out = unroll_forward(&mut g, &store, "c", &cfg, kv, &m, &s)?;
    Ok(g.value(out).max_abs_diff(&x))
}

fn sr_idempotent_linear(rng: &mut ChaCha8Rng) -> Result<f64> {
    let a = random(&[16, 16, 2], rng);
    let b = random(&[16, 16, 2], rng);
    let pa = degrade_sr(&a, 0.25)?;
    let idem = degrade_sr(&pa, 0.25)?.max_abs_diff(&pa);
    let comb = a.scale(2.0).add(&b.scale(-3.0))?;
    let lin = degrade_sr(&comb, 0.25)?.max_abs_diff(&pa.scale(2.0).add(&degrade_sr(&b, 0.25)?.scale(-3.0))?);
    Ok(idem.max(lin))
}

fn ssim_protocols(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut r = Tensor::from_fn(&[2, 12, 12], |_| rng.random_range(0.0..1.0));
    for v in &mut r.data_mut()[..144] {
        *v *= 0.5;
    }
    let noise = random(&[2, 12, 12], rng).scale(0.05);
    let e = r.add(&noise)?;
    let pair = VolumePair::new("v", r.clone(), e.clone())?;
    let o = SsimOptions::default();
    let (sw, _) = ssim_slice_wise(&pair, &o)?;
    let vol = ssim_volumetric(&pair, &o)?;
    let err = (sw - reference::ssim_slice_wise(&r, &e, 7)).abs().max((vol - reference::ssim_volumetric(&r, &e, 7)).abs());
    Ok((err, (sw - vol).abs()))
}

/// Runs every check; never stops early.
pub fn run_selftest(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Result<(bool, String)>| {
        let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        out.push(CheckOutcome { name, passed, detail });
    };
    push("operator adjoints", adjoints(&mut rng).map(|e| (e < 1e-10, format!("max rel err {e:.2e}"))));
    push("fft vs direct DFT", fft_oracle(&mut rng).map(|e| (e < 1e-12, format!("max abs err {e:.2e}"))));
    push("conv / aggregation oracles", kernel_oracles(&mut rng).map(|e| (e < 1e-12, format!("max abs err {e:.2e}"))));
    push("delta-kernel identity", delta_kernel_identity(&mut rng).map(|ok| (ok, "exact".into())));
    push("simple gate identity", simple_gate_identity(&mut rng).map(|ok| (ok, "exact".into())));
    push(
        "operator gradients",
        op_gradients(&mut rng).map(|(e, n)| (e < 1e-3, format!("max rel err {e:.2e} ({n})"))),
    );
    push("block gradients", block_gradients(&mut rng).map(|e| (e < 1e-3, format!("max rel err {e:.2e}"))));
    push("cascade gradients (T=2)", cascade_gradients(&mut rng).map(|e| (e < 1e-3, format!("max rel err {e:.2e}"))));
    push("data-consistency fixed point", dc_fixed_point(&mut rng).map(|ok| (ok, "sampled columns exact".into())));
    push("full mask recovers image", full_mask_recovers_image(&mut rng).map(|e| (e < 1e-6, format!("max abs err {e:.2e}"))));
    push("SR idempotence and linearity", sr_idempotent_linear(&mut rng).map(|e| (e < 1e-6, format!("max abs err {e:.2e}"))));
    push(
        "SSIM dual protocol",
        ssim_protocols(&mut rng).map(|(e, gap)| (e < 1e-9 && gap > 1e-6, format!("oracle err {e:.2e}, protocol gap {gap:.2e}"))),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest(7) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
