//! Inference over a dataset split and metric reports.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::model::model_forward;
use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::metrics::{psnr, MetricsReport, SsimOptions, VolumePair};
use crate::scalar::Scalar;
use crate::sim::{load_split, Sample, Split, Task};
use crate::tensor::Tensor;

/// Magnitude estimate of one sample.
pub fn predict<T: Scalar>(store: &ParamStore<T>, cfg: &ExperimentConfig, sample: &Sample<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let y = model_forward(&mut g, store, cfg, sample)?;
    Ok(g.value(y).clone())
}

/// Mean per-slice PSNR, each slice against its own reference maximum.
pub fn mean_psnr<T: Scalar>(refs: &[Tensor<T>], ests: &[Tensor<T>]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Undefined("PSNR over an empty split".into()));
    }
    let mut total = 0.0;
    for (r, e) in refs.iter().zip(ests) {
        total += psnr(e, r, r.max().to_f64_lossy())?;
    }
    Ok(total / refs.len() as f64)
}

/// Stacks consecutive slices into volumes of `per_volume` (the last may be
/// shorter), named `vol000`, `vol001`, ...
pub fn group_volumes<T: Scalar>(refs: &[Tensor<T>], ests: &[Tensor<T>], per_volume: usize) -> Result<Vec<VolumePair<T>>> {
    if per_volume == 0 {
        return Err(Error::Parameter("slices per volume must be positive".into()));
    }
    let stack = |slices: &[Tensor<T>]| -> Result<Tensor<T>> {
        let (h, w) = (slices[0].shape()[0], slices[0].shape()[1]);
        let data: Vec<T> = slices.iter().flat_map(|s| s.data().iter().copied()).collect();
        Tensor::new(&[slices.len(), h, w], data)
    };
    refs.chunks(per_volume)
        .zip(ests.chunks(per_volume))
        .enumerate()
        .map(|(i, (r, e))| VolumePair::new(format!("vol{i:03}"), stack(r)?, stack(e)?))
        .collect()
}

/// SHA-256 over the model inputs (degraded data and auxiliary physics) of a split.
pub fn input_hash<T: Scalar>(samples: &[Sample<T>]) -> String {
    let mut h = Sha256::new();
    let mut put = |t: &Tensor<T>| {
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            h.update(v.to_f64_lossy().to_le_bytes());
        }
    };
    for s in samples {
        put(&s.degraded);
        match &s.aux {
            crate::sim::Aux::Recon { mask, coils } => {
                put(&mask.to_tensor::<T>());
                put(coils.maps());
            }
            crate::sim::Aux::Denoise { g } => put(g),
            crate::sim::Aux::None => {}
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn report<T: Scalar>(
    samples: &[Sample<T>],
    ests: Vec<Tensor<T>>,
    per_volume: usize,
    notes: Vec<(String, String)>,
) -> Result<MetricsReport> {
    let refs = samples.iter().map(|s| s.reference()).collect::<Result<Vec<_>>>()?;
    let pairs = group_volumes(&refs, &ests, per_volume)?;
    let mut r = MetricsReport::compute(&pairs, &SsimOptions::default())?;
    r.notes = notes;
    r.notes.push(("input_sha256".into(), input_hash(samples)));
    Ok(r)
}

fn load_nonempty(root: &Path, task: Task, split: Split) -> Result<Vec<Sample<f32>>> {
    let (_, samples) = load_split::<f32>(root, task, split)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("{} split of {} is empty", split.as_str(), root.display())));
    }
    Ok(samples)
}

/// Runs a trained model over `split` of its dataset (or of `data`, when given).
pub fn evaluate(checkpoint: &Path, split: Split, data: Option<&Path>) -> Result<MetricsReport> {
    let ck = Checkpoint::<f32>::load(checkpoint)?;
    let cfg = &ck.config;
    let samples = load_nonempty(data.unwrap_or(&cfg.data), cfg.task, split)?;
    let ests = samples.iter().map(|s| predict(&ck.params, cfg, s)).collect::<Result<Vec<_>>>()?;
    let notes = vec![
        ("task".into(), cfg.task.as_str().into()),
        ("method".into(), cfg.model.as_str().into()),
        ("split".into(), split.as_str().into()),
    ];
    report(&samples, ests, cfg.slices_per_volume, notes)
}

/// Metrics of the model-free estimate: zero-filled reconstruction for
/// recon, the degraded input otherwise.
pub fn evaluate_baseline(data: &Path, task: Task, split: Split, per_volume: usize) -> Result<MetricsReport> {
    let samples = load_nonempty(data, task, split)?;
    let ests = samples.iter().map(|s| s.baseline()).collect::<Result<Vec<_>>>()?;
    let method = if task == Task::Recon { "zero_filled" } else { "degraded" };
    let notes = vec![
        ("task".into(), task.as_str().into()),
        ("method".into(), method.into()),
        ("split".into(), split.as_str().into()),
    ];
    report(&samples, ests, per_volume, notes)
}
