mod common;

use std::fs;
use std::path::Path;

use mrimix::autodiff::{Graph, ParamStore};
use mrimix::metrics::{MetricsReport, SsimOptions};
use mrimix::sim::{generate_dataset, load_split, DatasetParams, Split, Task};
use mrimix::train::{
    clip_grad_norm, cosine_lr, evaluate, evaluate_baseline, global_norm, group_volumes, init_model, input_hash, loss_l1,
    optimizer_step, sample_gradients, train, AdamState, Checkpoint, ExperimentConfig, GradMap, ModelKind, TrainOptions,
    TRAIN_LOG,
};
use mrimix::{Error, Tensor};
use proptest::prelude::*;

fn small_data(root: &Path, task: Task) {
    let p = DatasetParams { size: 16, n_train: 6, n_val: 2, n_test: 4, seed: 7, n_ellipses: 4, ..DatasetParams::new(task) };
    generate_dataset(&p, root).unwrap();
}

fn small_cfg(root: &Path, task: Task, model: ModelKind) -> ExperimentConfig {
    ExperimentConfig {
        width: 4,
        enc_blocks: vec![1],
        middle_blocks: 1,
        dec_blocks: vec![1],
        groups: 2,
        iterations: 2,
        data: root.to_path_buf(),
        epochs: 3,
        batch_size: 4,
        lr: 2e-3,
        slices_per_volume: 2,
        seed: 3,
        ..ExperimentConfig::new(task, model)
    }
}

#[test]
fn l1_loss_value_and_gradient() {
    let mut store = ParamStore::new();
    store.insert("p", Tensor::new(&[2], vec![1.0f64, -3.0]).unwrap()).unwrap();
    let mut g = Graph::new();
    let p = g.param(&store, "p").unwrap();
    let t = g.constant(Tensor::zeros(&[2]));
    let l = loss_l1(&mut g, p, t).unwrap();
    assert_eq!(g.value(l).item(), 2.0);
    let grads = g.backward(l, &store).unwrap().into_params();
    assert_eq!(grads["p"].data(), &[0.5, -0.5]);

    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(matches!(loss_l1(&mut g, a, b), Err(Error::Shape(_))));
}

#[test]
fn adam_matches_hand_rolled_two_steps() {
    let (lr, b1, b2, eps) = (0.05, 0.8, 0.95, 1e-6);
    let mut store = ParamStore::new();
    store.insert("w", Tensor::new(&[2], vec![1.0f64, -2.0]).unwrap()).unwrap();
    let mut st = AdamState::new(lr, b1, b2, eps);
    let gs = [[0.3, -1.0], [-0.1, 2.0]];
    let mut want = [1.0f64, -2.0];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    for (t, g) in gs.iter().enumerate() {
        let grads = GradMap::from([("w".to_string(), Tensor::new(&[2], g.to_vec()).unwrap())]);
        optimizer_step(&mut store, &grads, &mut st).unwrap();
        let t = (t + 1) as i32;
        for i in 0..2 {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            want[i] -= lr * mh / (vh.sqrt() + eps);
        }
        for (a, b) in store.get("w").unwrap().data().iter().zip(want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }
    assert_eq!(st.step, 2);
}

#[test]
fn adam_ignores_parameters_without_gradients_and_rejects_nan() {
    let mut store = ParamStore::new();
    store.insert("a", Tensor::full(&[1], 1.0f64)).unwrap();
    store.insert("b", Tensor::full(&[1], 2.0f64)).unwrap();
    let mut st = AdamState::new(0.1, 0.9, 0.999, 1e-8);
    let grads = GradMap::from([("a".to_string(), Tensor::full(&[1], 0.0))]);
    optimizer_step(&mut store, &grads, &mut st).unwrap();
    assert_eq!(store.get("a").unwrap().data(), &[1.0]);
    assert_eq!(store.get("b").unwrap().data(), &[2.0]);

    let before = store.clone();
    let grads = GradMap::from([
        ("a".to_string(), Tensor::full(&[1], 1.0)),
        ("b".to_string(), Tensor::full(&[1], f64::INFINITY)),
    ]);
    let err = optimizer_step(&mut store, &grads, &mut st).unwrap_err();
    assert!(matches!(err, Error::NonFiniteGradient { ref name } if name == "b"));
    assert_eq!(store, before);
}

#[test]
fn single_sample_overfits() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), Task::Denoise);
    let (_, samples) = load_split::<f64>(dir.path(), Task::Denoise, Split::Train).unwrap();
    let cfg = ExperimentConfig { width: 8, ..small_cfg(dir.path(), Task::Denoise, ModelKind::Naf) };
    let mut store = init_model::<f64>(&cfg).unwrap();
    let mut st = AdamState::new(2e-3, 0.9, 0.999, 1e-8);
    let (first, _) = sample_gradients(&store, &cfg, &samples[0]).unwrap();
    let mut last = first;
    for _ in 0..200 {
        let (l, mut grads) = sample_gradients(&store, &cfg, &samples[0]).unwrap();
        clip_grad_norm(&mut grads, 1.0);
        optimizer_step(&mut store, &grads, &mut st).unwrap();
        last = l;
    }
    assert!(last < 0.1 * first, "loss {first} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let data = tempfile::tempdir().unwrap();
    small_data(data.path(), Task::Sr);
    let cfg = ExperimentConfig { epochs: 2, ..small_cfg(data.path(), Task::Sr, ModelKind::Lsg) };
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let out = tempfile::tempdir().unwrap();
            let s = train(&cfg, out.path(), &TrainOptions::default()).unwrap();
            let ck = fs::read(&s.last_checkpoint).unwrap();
            (s.epochs.iter().map(|e| (e.train_loss, e.val_psnr)).collect::<Vec<_>>(), ck, out)
        })
        .collect();
    assert_eq!(runs[0].0, runs[1].0);
    assert!(runs[0].1 == runs[1].1, "checkpoints differ");
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let data = tempfile::tempdir().unwrap();
    small_data(data.path(), Task::Recon);
    let cfg = small_cfg(data.path(), Task::Recon, ModelKind::Naf);

    let full = tempfile::tempdir().unwrap();
    let s = train(&cfg, full.path(), &TrainOptions::default()).unwrap();
    assert_eq!(s.epochs.len(), 3);

    let split = tempfile::tempdir().unwrap();
    let opts = TrainOptions { epoch_limit: Some(1), ..TrainOptions::default() };
    let a = train(&cfg, split.path(), &opts).unwrap();
    assert_eq!(a.epochs.len(), 1);
    let b = train(&cfg, split.path(), &TrainOptions { resume: true, ..TrainOptions::default() }).unwrap();
    assert_eq!(b.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![2, 3]);

    let x = Checkpoint::<f32>::load(&s.last_checkpoint).unwrap();
    let y = Checkpoint::<f32>::load(&b.last_checkpoint).unwrap();
    assert_eq!(x, y);
    let losses = |p: &Path| {
        let text = fs::read_to_string(p.join(TRAIN_LOG)).unwrap();
        text.lines().skip(1).map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect::<Vec<_>>()
    };
    assert_eq!(losses(full.path()), losses(split.path()));

    let other = ExperimentConfig { lr: 1e-3, ..cfg };
    let err = train(&other, split.path(), &TrainOptions { resume: true, ..TrainOptions::default() }).unwrap_err();
    assert!(matches!(err, Error::Version(_)));
}

#[test]
fn checkpoint_round_trip_and_version_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg(dir.path(), Task::Sr, ModelKind::Lsg);
    let mut adam = AdamState::new(1e-3, cfg.beta1, cfg.beta2, cfg.eps);
    let mut params = init_model::<f32>(&cfg).unwrap();
    let grads: GradMap<f32> = params.iter().map(|(n, t)| (n.clone(), Tensor::full(t.shape(), 0.25))).collect();
    optimizer_step(&mut params, &grads, &mut adam).unwrap();
    let ck = Checkpoint { config: cfg, params, adam, epoch: 4, best_val_psnr: 31.5, best_epoch: 3 };
    let path = dir.path().join("x.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::<f32>::load(&path).unwrap(), ck);

    let text = ck.to_bytes().unwrap();
    let bumped = String::from_utf8_lossy(&text).replacen("version=1\n", "version=99\n", 1);
    let err = Checkpoint::<f32>::from_bytes(bumped.as_bytes(), &path).unwrap_err();
    assert!(matches!(err, Error::Version(_)));

    let other = ExperimentConfig { width: 8, ..ck.config.clone() };
    let wrong = Checkpoint { config: other, ..ck.clone() };
    let err = Checkpoint::<f32>::from_bytes(&wrong.to_bytes().unwrap(), &path).unwrap_err();
    assert!(matches!(err, Error::Version(_)));

    assert!(Checkpoint::<f32>::from_bytes(b"garbage", &path).unwrap_err().is_io());
    assert!(Checkpoint::<f32>::load(&dir.path().join("missing.ckpt")).unwrap_err().is_io());
}

#[test]
fn evaluation_reports_and_baselines() {
    let data = tempfile::tempdir().unwrap();
    small_data(data.path(), Task::Sr);
    let (_, test) = load_split::<f32>(data.path(), Task::Sr, Split::Test).unwrap();
    let refs: Vec<_> = test.iter().map(|s| s.reference().unwrap()).collect();
    let ideal = MetricsReport::compute(&group_volumes(&refs, &refs, 2).unwrap(), &SsimOptions::default()).unwrap();
    assert_eq!(ideal.volumes.len(), 2);
    for v in &ideal.volumes {
        assert_eq!(v.psnr, f64::INFINITY);
        assert_eq!(v.nmse, 0.0);
        assert!((v.ssim_slice - 1.0).abs() < 1e-9 && (v.ssim_vol - 1.0).abs() < 1e-9);
    }

    let base = evaluate_baseline(data.path(), Task::Sr, Split::Test, 2).unwrap();
    assert!(base.average().unwrap().psnr.is_finite());

    let mut hashes = Vec::new();
    for model in [ModelKind::Naf, ModelKind::Lsg] {
        let cfg = ExperimentConfig { epochs: 1, ..small_cfg(data.path(), Task::Sr, model) };
        let out = tempfile::tempdir().unwrap();
        let s = train(&cfg, out.path(), &TrainOptions::default()).unwrap();
        let rep = evaluate(&s.best_checkpoint, Split::Test, None).unwrap();
        assert_eq!(rep.volumes.len(), 2);
        let note = |k: &str| rep.notes.iter().find(|(n, _)| n == k).map(|(_, v)| v.clone()).unwrap();
        assert_eq!(note("method"), model.as_str());
        hashes.push(note("input_sha256"));
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(hashes[0], input_hash(&test));

    let err = evaluate_baseline(Path::new("/nonexistent/mrimix"), Task::Sr, Split::Test, 2).unwrap_err();
    assert!(err.is_io());
}

#[test]
fn config_text_round_trip() {
    let mut cfg = ExperimentConfig::new(Task::Recon, ModelKind::Lsg);
    cfg.enc_blocks = vec![2, 1, 3];
    cfg.dec_blocks = vec![1, 1, 1];
    cfg.lr = 3.5e-4;
    cfg.share_weights = true;
    cfg.data = "some/where".into();
    assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert!(matches!(ExperimentConfig::parse("task=sr\nbatch_size=0\n").and_then(|c| c.validate()), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipping_never_increases_the_norm(vals in proptest::collection::vec(-10.0f64..10.0, 1..12), max in 0.01f64..5.0) {
        let mut g = GradMap::new();
        for (i, c) in vals.chunks(3).enumerate() {
            g.insert(format!("p{i}"), Tensor::new(&[c.len()], c.to_vec()).unwrap());
        }
        let before = global_norm(&g);
        let reported = clip_grad_norm(&mut g, max);
        let after = global_norm(&g);
        prop_assert_eq!(reported, before);
        prop_assert!(after <= before + 1e-12);
        prop_assert!(after <= max * (1.0 + 1e-12));
        if before <= max {
            prop_assert_eq!(after, before);
        }
    }

    #[test]
    fn cosine_schedule_decreases_between_bounds(lr in 1e-5f64..1.0, frac in 0.0f64..1.0, total in 1u64..1000) {
        let lr_min = lr * frac;
        let mut prev = f64::INFINITY;
        for step in 0..=total.min(50) {
            let s = step * total / total.min(50);
            let v = cosine_lr(lr, lr_min, s, total);
            prop_assert!(v <= prev + 1e-15 && v >= lr_min - 1e-15 && v <= lr + 1e-15);
            prev = v;
        }
    }
}
