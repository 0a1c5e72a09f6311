mod common;

use common::{fd_check, jitter_params, random, rng};
use mrimix::autodiff::{Graph, ParamStore};
use mrimix::mri::{apply_mask, expand, fft2c, generate_mask, ifft2c, make_coil_maps, reduce, CoilSensitivities, SamplingMask};
use mrimix::nn::{backbone_correction, init_backbone, BackboneConfig, BlockConfig, Mixer};
use mrimix::sim::{make_phantom, PhantomSpec};
use mrimix::unrolled::{dc_step, init_unrolled, reg_step, unroll_forward, unroll_states, UnrolledConfig};
use mrimix::{Error, Tensor};

fn backbone(levels: usize) -> BackboneConfig {
    BackboneConfig {
        width: 4,
        enc_blocks: vec![1; levels],
        middle_blocks: 1,
        dec_blocks: vec![1; levels],
        in_channels: 2,
        out_channels: 2,
        block: BlockConfig::new(4, Mixer::LocalDw),
    }
}

fn cascade(iterations: usize) -> UnrolledConfig {
    UnrolledConfig { iterations, ..UnrolledConfig::new(backbone(1)) }
}

fn scalar_kspace(re: f64) -> Tensor<f64> {
    Tensor::new(&[1, 1, 1, 2], vec![re, 0.0]).unwrap()
}

#[test]
fn dc_step_scalar_cases() {
    let keep = SamplingMask { kept: vec![true], acceleration: 1, center_fraction: 0.5 };
    for (mu, want) in [(0.5, 3.0), (1.0, 2.0), (0.0, 4.0)] {
        let mut g = Graph::new();
        let k = g.constant(scalar_kspace(4.0));
        let km = g.constant(scalar_kspace(2.0));
        let m = g.constant(Tensor::full(&[1], mu));
        let out = dc_step(&mut g, k, km, &keep, m).unwrap();
        assert_eq!(g.value(out).data(), &[want, 0.0]);
    }
}

#[test]
fn hard_data_consistency_replaces_sampled_columns() {
    let mut r = rng(1);
    let m = generate_mask(12, 3, 0.2, 4).unwrap();
    let k = random(&[2, 10, 12, 2], &mut r);
    let km = apply_mask(&random(&[2, 10, 12, 2], &mut r), &m).unwrap();
    let mut g = Graph::new();
    let (kv, kmv) = (g.constant(k.clone()), g.constant(km.clone()));
    let one = g.constant(Tensor::full(&[1], 1.0));
    let out = dc_step(&mut g, kv, kmv, &m, one).unwrap();
    let o = g.value(out);
    for (i, (p, q)) in o.data().chunks(2).zip(k.data().chunks(2)).enumerate() {
        let col = i % 12;
        if m.kept[col] {
            assert_eq!(p, &km.data()[2 * i..2 * i + 2]);
        } else {
            assert_eq!(p, q);
        }
    }
    let bad = g.constant(Tensor::zeros(&[2, 10, 11, 2]));
    assert!(matches!(dc_step(&mut g, kv, bad, &m, one), Err(Error::Shape(_))));
}

#[test]
fn identity_regularizer_contributes_projected_kspace() {
    let mut r = rng(2);
    let cfg = UnrolledConfig { residual_in_regularizer: true, ..cascade(1) };
    let mut store = ParamStore::new();
    init_backbone(&mut store, "d", &cfg.backbone, &mut r).unwrap();
    let s: CoilSensitivities<f64> = make_coil_maps(3, 8, 8, 5).unwrap();
    let k = random(&[3, 8, 8, 2], &mut r);
    let mut g = Graph::new();
    let kv = g.constant(k.clone());
    let bb = cfg.backbone.clone();
    let corr = reg_step(&mut g, kv, &s, |g, x| mrimix::nn::backbone_forward(g, &store, "d", &bb, x)).unwrap();
    let want = fft2c(&expand(&reduce(&ifft2c(&k).unwrap(), &s).unwrap(), &s).unwrap()).unwrap();
    assert!(g.value(corr).max_abs_diff(&want) < 1e-12);

    // single uniform coil: the projection is the identity
    let s1 = CoilSensitivities::uniform(8, 8);
    let k1 = random(&[1, 8, 8, 2], &mut r);
    let kv = g.constant(k1.clone());
    let corr = reg_step(&mut g, kv, &s1, |g, x| mrimix::nn::backbone_forward(g, &store, "d", &bb, x)).unwrap();
    assert!(g.value(corr).max_abs_diff(&k1) < 1e-12);
}

#[test]
fn regularizer_output_is_finite_for_random_input() {
    let mut r = rng(3);
    let cfg = cascade(1);
    let mut store = ParamStore::new();
    init_backbone(&mut store, "d", &cfg.backbone, &mut r).unwrap();
    jitter_params(&mut store, 0.5, &mut r);
    let s: CoilSensitivities<f64> = make_coil_maps(2, 16, 16, 1).unwrap();
    let mut g = Graph::new();
    let kv = g.constant(random(&[2, 16, 16, 2], &mut r));
    let corr = reg_step(&mut g, kv, &s, |g, x| backbone_correction(g, &store, "d", &cfg.backbone, x)).unwrap();
    assert_eq!(g.shape(corr), &[2, 16, 16, 2]);
    assert!(g.value(corr).all_finite());
}

#[test]
fn zero_correction_cascade_is_zero_filled() {
    let mut r = rng(4);
    for fixed_mu in [false, true] {
        let cfg = UnrolledConfig { fixed_mu, ..cascade(5) };
        let mut store = ParamStore::new();
        init_unrolled(&mut store, "c", &cfg, &mut r).unwrap();
        let m = generate_mask(16, 4, 0.125, 7).unwrap();
        let s: CoilSensitivities<f64> = make_coil_maps(2, 16, 16, 2).unwrap();
        let km = apply_mask(&random(&[2, 16, 16, 2], &mut r), &m).unwrap();
        let mut g = Graph::new();
        let kv = g.constant(km.clone());
        let x = unroll_forward(&mut g, &store, "c", &cfg, kv, &m, &s).unwrap();
        let zf = reduce(&ifft2c(&km).unwrap(), &s).unwrap();
        assert!(g.value(x).max_abs_diff(&zf) < 1e-12);
    }
}

#[test]
fn full_mask_recovers_the_image() {
    let mut r = rng(5);
    let cfg = cascade(4);
    let mut store = ParamStore::new();
    init_unrolled(&mut store, "c", &cfg, &mut r).unwrap();
    let s: CoilSensitivities<f64> = make_coil_maps(3, 16, 16, 8).unwrap();
    let x = random(&[16, 16, 2], &mut r);
    let km = fft2c(&expand(&x, &s).unwrap()).unwrap();
    let mut g = Graph::new();
    let kv = g.constant(km);
    let out = unroll_forward(&mut g, &store, "c", &cfg, kv, &SamplingMask::full(16), &s).unwrap();
    assert!(g.value(out).max_abs_diff(&x) < 1e-6);
}

type C = (f64, f64);

/// Centered orthonormal 2-point DFT; it is real, symmetric and its own
/// inverse: `1/sqrt(2) [[-1, 1], [1, 1]]`.
fn f2(k: [[C; 2]; 2]) -> [[C; 2]; 2] {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let mat = [[-a, a], [a, a]];
    let mut rows = [[(0.0, 0.0); 2]; 2];
    for y in 0..2 {
        for x in 0..2 {
            for j in 0..2 {
                rows[y][x].0 += mat[x][j] * k[y][j].0;
                rows[y][x].1 += mat[x][j] * k[y][j].1;
            }
        }
    }
    let mut out = [[(0.0, 0.0); 2]; 2];
    for y in 0..2 {
        for x in 0..2 {
            for j in 0..2 {
                out[y][x].0 += mat[y][j] * rows[j][x].0;
                out[y][x].1 += mat[y][j] * rows[j][x].1;
            }
        }
    }
    out
}

#[test]
fn two_by_two_cascade_matches_hand_evaluation() {
    // Backbone with no levels or blocks: intro passes the channels through,
    // ending reads the right neighbour, so D(x)(y, x) = x(y, x + 1).
    let bb = BackboneConfig { enc_blocks: vec![], middle_blocks: 0, dec_blocks: vec![], width: 2, ..backbone(0) };
    let cfg = UnrolledConfig { iterations: 2, mu_init: 0.5, fixed_mu: true, ..UnrolledConfig::new(bb) };
    let mut store = ParamStore::new();
    init_unrolled(&mut store, "c", &cfg, &mut rng(6)).unwrap();
    for t in 0..2 {
        let mut intro = Tensor::zeros(&[2, 2, 3, 3]);
        let mut ending = Tensor::zeros(&[2, 2, 3, 3]);
        for c in 0..2 {
            intro.set(&[c, c, 1, 1], 1.0);
            ending.set(&[c, c, 1, 2], 1.0);
        }
        *store.get_mut(&format!("c.d{t}.intro.weight")).unwrap() = intro;
        *store.get_mut(&format!("c.d{t}.ending.weight")).unwrap() = ending;
    }
    let mask = SamplingMask { kept: vec![false, true], acceleration: 2, center_fraction: 0.5 };
    let meas: [[C; 2]; 2] = [[(0.0, 0.0), (1.0, -2.0)], [(0.0, 0.0), (0.5, 3.0)]];

    let shift = |x: [[C; 2]; 2]| [[x[0][1], (0.0, 0.0)], [x[1][1], (0.0, 0.0)]];
    let step = |k: [[C; 2]; 2]| {
        let corr = f2(shift(f2(k)));
        let mut out = k;
        for y in 0..2 {
            for x in 0..2 {
                let dc = if mask.kept[x] { (0.5 * (k[y][x].0 - meas[y][x].0), 0.5 * (k[y][x].1 - meas[y][x].1)) } else { (0.0, 0.0) };
                out[y][x] = (k[y][x].0 - dc.0 + corr[y][x].0, k[y][x].1 - dc.1 + corr[y][x].1);
            }
        }
        out
    };
    let k1 = step(meas);
    let k2 = step(k1);

    let t = Tensor::from_fn(&[1, 2, 2, 2], |i| {
        let z = meas[i[1]][i[2]];
        if i[3] == 0 { z.0 } else { z.1 }
    });
    let mut g = Graph::new();
    let kv = g.constant(t);
    let states = unroll_states(&mut g, &store, "c", &cfg, kv, &mask, &CoilSensitivities::uniform(2, 2)).unwrap();
    for (want, got) in [(k1, states[1]), (k2, states[2])] {
        for y in 0..2 {
            for x in 0..2 {
                assert!((g.value(got).get(&[0, y, x, 0]) - want[y][x].0).abs() < 1e-12);
                assert!((g.value(got).get(&[0, y, x, 1]) - want[y][x].1).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn unit_step_sampled_locations_are_measurements_plus_correction() {
    let mut r = rng(7);
    let cfg = UnrolledConfig { iterations: 3, fixed_mu: true, ..cascade(3) };
    let mut store = ParamStore::new();
    init_unrolled(&mut store, "c", &cfg, &mut r).unwrap();
    jitter_params(&mut store, 0.3, &mut r);
    let m = generate_mask(16, 4, 0.125, 3).unwrap();
    let s: CoilSensitivities<f64> = make_coil_maps(2, 16, 16, 9).unwrap();
    let km = apply_mask(&random(&[2, 16, 16, 2], &mut r), &m).unwrap();
    let mut g = Graph::new();
    let kv = g.constant(km.clone());
    let states = unroll_states(&mut g, &store, "c", &cfg, kv, &m, &s).unwrap();
    for t in 0..3 {
        let prev = g.value(states[t]).clone();
        let mut h = Graph::new();
        let pv = h.constant(prev);
        let bp = cfg.backbone_prefix("c", t);
        let corr = reg_step(&mut h, pv, &s, |h, x| backbone_correction(h, &store, &bp, &cfg.backbone, x)).unwrap();
        let want = apply_mask(&km.add(h.value(corr)).unwrap(), &m).unwrap();
        let got = apply_mask(g.value(states[t + 1]), &m).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12, "iteration {t}");
    }
}

#[test]
fn truncated_cascade_equals_shorter_cascade() {
    let mut r = rng(8);
    let long = cascade(4);
    let short = cascade(3);
    let mut store = ParamStore::new();
    init_unrolled(&mut store, "c", &long, &mut r).unwrap();
    jitter_params(&mut store, 0.3, &mut r);
    let m = generate_mask(16, 4, 0.125, 5).unwrap();
    let s = CoilSensitivities::uniform(16, 16);
    let km = apply_mask(&random(&[1, 16, 16, 2], &mut r), &m).unwrap();
    let mut g = Graph::new();
    let kv = g.constant(km.clone());
    let a = unroll_states(&mut g, &store, "c", &long, kv, &m, &s).unwrap();
    let mut h = Graph::new();
    let kv = h.constant(km);
    let b = unroll_states(&mut h, &store, "c", &short, kv, &m, &s).unwrap();
    assert_eq!(b.len(), 4);
    for t in 0..4 {
        assert_eq!(g.value(a[t]), h.value(b[t]));
    }
}

#[test]
fn zero_filled_error_grows_as_columns_are_removed() {
    let x: Tensor<f64> = make_phantom(&PhantomSpec { height: 32, width: 32, n_ellipses: 8, seed: 3 }).unwrap();
    let xc = mrimix::mri::real_to_complex(&x);
    let s = CoilSensitivities::uniform(32, 32);
    let cfg = cascade(2);
    let mut store = ParamStore::new();
    init_unrolled(&mut store, "c", &cfg, &mut rng(9)).unwrap();
    let mut kept = vec![true; 32];
    let mut order: Vec<usize> = (0..32).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng(10));
    let mut last = -1.0;
    for drop in std::iter::once(None).chain(order.iter().map(Some)) {
        if let Some(&c) = drop {
            kept[c] = false;
        }
        let m = SamplingMask { kept: kept.clone(), acceleration: 1, center_fraction: 0.5 };
        let km = apply_mask(&fft2c(&expand(&xc, &s).unwrap()).unwrap(), &m).unwrap();
        let mut g = Graph::new();
        let kv = g.constant(km);
        let out = unroll_forward(&mut g, &store, "c", &cfg, kv, &m, &s).unwrap();
        let err = g.value(out).sub(&xc).unwrap().norm();
        if drop.is_none() {
            assert!(err < 1e-6);
        }
        assert!(err >= last - 1e-12, "error decreased to {err} from {last}");
        last = err;
    }
}

#[test]
fn cascade_gradients_match_finite_differences() {
    let mut r = rng(11);
    let cfg = cascade(2);
    let mut store = ParamStore::new();
    init_unrolled(&mut store, "c", &cfg, &mut r).unwrap();
    jitter_params(&mut store, 0.3, &mut r);
    let m = generate_mask(8, 2, 0.25, 1).unwrap();
    let s = CoilSensitivities::uniform(8, 8);
    let km = apply_mask(&random(&[1, 8, 8, 2], &mut r), &m).unwrap();
    let res = fd_check(&[km], &store, &|g, st, v| unroll_forward(g, st, "c", &cfg, v[0], &m, &s), 6);
    assert!(res.max_rel < 1e-3, "{:e} at {}", res.max_rel, res.worst);
}

#[test]
fn divergence_names_the_iteration() {
    let bb = BackboneConfig { enc_blocks: vec![], middle_blocks: 0, dec_blocks: vec![], width: 2, ..backbone(0) };
    let cfg = UnrolledConfig { iterations: 4, ..UnrolledConfig::new(bb) };
    let mut store = ParamStore::new();
    init_unrolled(&mut store, "c", &cfg, &mut rng(12)).unwrap();
    for t in 0..4 {
        let mut intro = Tensor::zeros(&[2, 2, 3, 3]);
        let mut ending = Tensor::zeros(&[2, 2, 3, 3]);
        for c in 0..2 {
            intro.set(&[c, c, 1, 1], 1.0);
            ending.set(&[c, c, 1, 1], 1e200);
        }
        *store.get_mut(&format!("c.d{t}.intro.weight")).unwrap() = intro;
        *store.get_mut(&format!("c.d{t}.ending.weight")).unwrap() = ending;
    }
    let m = SamplingMask::full(4);
    let km = random(&[1, 4, 4, 2], &mut rng(13));
    let mut g = Graph::new();
    let kv = g.constant(km);
    let err = unroll_forward(&mut g, &store, "c", &cfg, kv, &m, &CoilSensitivities::uniform(4, 4)).unwrap_err();
    assert!(matches!(err, Error::Divergence { iteration: 2 }), "{err}");
}

#[test]
fn weight_sharing_uses_one_slot() {
    let mut r = rng(14);
    let shared = UnrolledConfig { share_weights: true, ..cascade(6) };
    let mut a = ParamStore::<f64>::new();
    init_unrolled(&mut a, "c", &shared, &mut r).unwrap();
    let mut b = ParamStore::<f64>::new();
    init_unrolled(&mut b, "c", &cascade(6), &mut r).unwrap();
    assert_eq!(a.count("c.d0."), b.count("c.d0."));
    assert_eq!(b.len(), 6 * a.len());
    assert!(a.names().all(|n| n.starts_with("c.d0.") || n == "c.mu0"));
    let fixed = UnrolledConfig { fixed_mu: true, ..cascade(2) };
    let mut f = ParamStore::<f64>::new();
    init_unrolled(&mut f, "c", &fixed, &mut r).unwrap();
    assert!(!f.contains("c.mu0"));
    assert!(UnrolledConfig { iterations: 0, ..cascade(1) }.validate().is_err());
}
