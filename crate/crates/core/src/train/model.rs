//! Task models and the training loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::{backbone_forward, init_backbone};
use crate::scalar::Scalar;
use crate::sim::{mix_seed, Aux, Sample, Task};
use crate::unrolled::{init_unrolled, unroll_forward};

pub const CASCADE_PREFIX: &str = "cascade";
pub const IMAGE_PREFIX: &str = "net";

/// Fresh parameters for `cfg`, drawn from a stream derived from its seed.
pub fn init_model<T: Scalar>(cfg: &ExperimentConfig) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ 0x1417));
    let mut store = ParamStore::new();
    match cfg.task {
        Task::Recon => init_unrolled(&mut store, CASCADE_PREFIX, &cfg.unrolled(), &mut rng)?,
        _ => init_backbone(&mut store, IMAGE_PREFIX, &cfg.backbone(), &mut rng)?,
    }
    Ok(store)
}

/// Magnitude estimate `[H,W]` for one sample.
pub fn model_forward<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, cfg: &ExperimentConfig, sample: &Sample<T>) -> Result<Var> {
    match (&sample.aux, cfg.task) {
        (Aux::Recon { mask, coils }, Task::Recon) => {
            let k = g.constant(sample.degraded.clone());
            let x = unroll_forward(g, store, CASCADE_PREFIX, &cfg.unrolled(), k, mask, coils)?;
            g.complex_abs(x)
        }
        (Aux::Recon { .. }, _) | (_, Task::Recon) => {
            Err(Error::Config(format!("sample {} does not belong to a {} model", sample.index, cfg.task.as_str())))
        }
        _ => {
            let s = sample.degraded.shape().to_vec();
            if s.len() != 2 {
                return Err(shape_err!("image sample must be [H,W], got {s:?}"));
            }
            let x = g.constant(sample.degraded.clone().into_reshape(&[1, 1, s[0], s[1]])?);
            let y = backbone_forward(g, store, IMAGE_PREFIX, &cfg.backbone(), x)?;
            g.reshape(y, &s)
        }
    }
}

/// Mean absolute error.
pub fn loss_l1<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(shape_err!("prediction {:?} vs target {:?}", g.shape(pred), g.shape(target)));
    }
    let d = g.sub(pred, target)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}
