//! The training loop.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::eval::{mean_psnr, predict};
use super::model::{init_model, loss_l1, model_forward};
use super::optim::{clip_grad_norm, cosine_lr, optimizer_step, AdamState, GradMap};
use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::{load_split, mix_seed, Sample, Split};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from `<out>/last.ckpt`.
    pub resume: bool,
    /// Stop after this many epochs in this call (the schedule still spans
    /// the configured epoch count).
    pub epoch_limit: Option<usize>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_psnr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    /// Epochs run by this call.
    pub epochs: Vec<EpochLog>,
    /// Mean PSNR of the model-free estimate over the validation split.
    pub baseline_val_psnr: f64,
    pub best_val_psnr: f64,
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log: PathBuf,
}

impl TrainSummary {
    /// The best validation PSNR falls short of the model-free estimate.
    pub fn failed(&self) -> bool {
        self.best_val_psnr.is_finite() && self.best_val_psnr < self.baseline_val_psnr
    }
}

/// Summed gradients and loss of one sample.
pub fn sample_gradients<T: Scalar>(store: &ParamStore<T>, cfg: &ExperimentConfig, sample: &Sample<T>) -> Result<(f64, GradMap<T>)> {
    let mut g = Graph::new();
    let pred = model_forward(&mut g, store, cfg, sample)?;
    let target = g.constant(sample.reference()?);
    let loss = loss_l1(&mut g, pred, target)?;
    let grads = g.backward(loss, store)?;
    Ok((g.value(loss).item().to_f64_lossy(), grads.into_params()))
}

fn accumulate<T: Scalar>(acc: &mut GradMap<T>, grads: GradMap<T>) -> Result<()> {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(a) => a.add_assign(&g)?,
            None => {
                acc.insert(name, g);
            }
        }
    }
    Ok(())
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x5eed_0000 ^ epoch as u64)));
    order
}

fn validation_psnr(store: &ParamStore<f32>, cfg: &ExperimentConfig, val: &[Sample<f32>]) -> Result<f64> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let refs = val.iter().map(|s| s.reference()).collect::<Result<Vec<_>>>()?;
    let ests = val.iter().map(|s| predict(store, cfg, s)).collect::<Result<Vec<_>>>()?;
    mean_psnr(&refs, &ests)
}

/// Trains `cfg` on its dataset, writing checkpoints and the epoch log to `out`.
pub fn train(cfg: &ExperimentConfig, out: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let (_, mut train_set) = load_split::<f32>(&cfg.data, cfg.task, Split::Train)?;
    let (_, val_set) = load_split::<f32>(&cfg.data, cfg.task, Split::Val)?;
    if cfg.max_train > 0 {
        train_set.truncate(cfg.max_train);
    }
    if train_set.is_empty() {
        return Err(Error::Config(format!("no training samples under {}", cfg.data.display())));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let best_path = out.join(BEST_CHECKPOINT);
    let last_path = out.join(LAST_CHECKPOINT);
    let log_path = out.join(TRAIN_LOG);

    let mut state = if opts.resume {
        let ck = Checkpoint::<f32>::load(&last_path)?;
        if ck.config != *cfg {
            return Err(Error::Version(format!("{} was written for a different config", last_path.display())));
        }
        ck
    } else {
        Checkpoint {
            config: cfg.clone(),
            params: init_model::<f32>(cfg)?,
            adam: AdamState::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps),
            epoch: 0,
            best_val_psnr: f64::NEG_INFINITY,
            best_epoch: 0,
        }
    };
    let mut log = if opts.resume && log_path.exists() {
        OpenOptions::new().append(true).open(&log_path)
    } else {
        fs::File::create(&log_path).and_then(|mut f| writeln!(f, "epoch,train_loss,val_psnr,wall_seconds").map(|_| f))
    }
    .map_err(|e| Error::io(&log_path, e))?;

    let baseline = {
        let refs = val_set.iter().map(|s| s.reference()).collect::<Result<Vec<_>>>()?;
        let ests = val_set.iter().map(|s| s.baseline()).collect::<Result<Vec<_>>>()?;
        if refs.is_empty() { f64::NAN } else { mean_psnr(&refs, &ests)? }
    };

    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let start = Instant::now();
    let mut ran = Vec::new();
    let stop = opts.epoch_limit.map_or(cfg.epochs, |l| (state.epoch + l).min(cfg.epochs));
    while state.epoch < stop {
        let epoch = state.epoch;
        let mut loss_sum = 0.0;
        for batch in epoch_order(cfg.seed, epoch, n).chunks(cfg.batch_size) {
            let mut acc = GradMap::new();
            for &i in batch {
                let (loss, grads) = sample_gradients(&state.params, cfg, &train_set[i])?;
                loss_sum += loss;
                accumulate(&mut acc, grads)?;
            }
            let inv = 1.0 / batch.len() as f32;
            for g in acc.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            clip_grad_norm(&mut acc, cfg.clip_norm);
            state.adam.lr = cosine_lr(cfg.lr, cfg.lr_min, state.adam.step, total_steps);
            optimizer_step(&mut state.params, &acc, &mut state.adam)?;
        }
        let train_loss = loss_sum / n as f64;
        let val_psnr = validation_psnr(&state.params, cfg, &val_set)?;
        state.epoch += 1;
        let improved = val_psnr.is_nan() || val_psnr > state.best_val_psnr;
        if improved {
            state.best_val_psnr = if val_psnr.is_nan() { f64::NAN } else { val_psnr };
            state.best_epoch = state.epoch;
        }
        let wall_seconds = start.elapsed().as_secs_f64();
        writeln!(log, "{},{train_loss},{val_psnr},{wall_seconds:.3}", state.epoch).map_err(|e| Error::io(&log_path, e))?;
        if opts.verbose {
            eprintln!("epoch {:>3}  train_loss {train_loss:.6}  val_psnr {val_psnr:.3}  {wall_seconds:.1}s", state.epoch);
        }
        if improved {
            state.save(&best_path)?;
        }
        state.save(&last_path)?;
        ran.push(EpochLog { epoch: state.epoch, train_loss, val_psnr, wall_seconds });
    }
    Ok(TrainSummary {
        epochs: ran,
        baseline_val_psnr: baseline,
        best_val_psnr: state.best_val_psnr,
        best_epoch: state.best_epoch,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        log: log_path,
    })
}
