//! Loss, optimizer, training loop, checkpoints and evaluation.

mod checkpoint;
mod config;
mod eval;
mod model;
mod optim;
mod run;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{ExperimentConfig, ModelKind};
pub use eval::{evaluate, evaluate_baseline, group_volumes, input_hash, mean_psnr, predict};
pub use model::{init_model, loss_l1, model_forward, CASCADE_PREFIX, IMAGE_PREFIX};
pub use optim::{clip_grad_norm, cosine_lr, global_norm, optimizer_step, AdamState, GradMap};
pub use run::{sample_gradients, train, EpochLog, TrainOptions, TrainSummary, BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG};
