//! Experiment configuration in `key=value` form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::{BackboneConfig, BlockConfig, LsConvConfig, Mixer};
use crate::sim::Task;
use crate::unrolled::UnrolledConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Naf,
    Lsg,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Naf => "naf",
            ModelKind::Lsg => "lsg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "naf" => Ok(ModelKind::Naf),
            "lsg" => Ok(ModelKind::Lsg),
            _ => Err(Error::Config(format!("unknown model `{s}` (expected naf or lsg)"))),
        }
    }

    pub fn mixer(self) -> Mixer {
        match self {
            ModelKind::Naf => Mixer::LocalDw,
            ModelKind::Lsg => Mixer::LsConv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: ModelKind,
    pub width: usize,
    pub enc_blocks: Vec<usize>,
    pub middle_blocks: usize,
    pub dec_blocks: Vec<usize>,
    pub expansion: usize,
    pub dw_kernel: usize,
    pub channel_attention: bool,
    pub kl: usize,
    pub ks: usize,
    pub groups: usize,
    pub normalize_kernels: bool,
    pub iterations: usize,
    pub mu_init: f64,
    pub share_weights: bool,
    pub fixed_mu: bool,
    pub residual_in_regularizer: bool,
    /// Dataset root as written by dataset generation.
    pub data: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Use only the first `n` training samples; 0 keeps all.
    pub max_train: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub slices_per_volume: usize,
}

impl ExperimentConfig {
    pub fn new(task: Task, model: ModelKind) -> Self {
        ExperimentConfig {
            task,
            model,
            width: 16,
            enc_blocks: vec![1, 1],
            middle_blocks: 1,
            dec_blocks: vec![1, 1],
            expansion: 2,
            dw_kernel: 3,
            channel_attention: false,
            kl: 7,
            ks: 3,
            groups: 8,
            normalize_kernels: false,
            iterations: 8,
            mu_init: 1.0,
            share_weights: false,
            fixed_mu: false,
            residual_in_regularizer: false,
            data: PathBuf::from("data"),
            seed: 0,
            epochs: 10,
            batch_size: 4,
            max_train: 0,
            lr: 1e-3,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            slices_per_volume: 8,
        }
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            dw_kernel: self.dw_kernel,
            expansion: self.expansion,
            channel_attention: self.channel_attention,
            lsconv: LsConvConfig { kl: self.kl, ks: self.ks, groups: self.groups, normalize_kernels: self.normalize_kernels },
            ..BlockConfig::new(self.width, self.model.mixer())
        }
    }

    pub fn backbone(&self) -> BackboneConfig {
        let ch = if self.task == Task::Recon { 2 } else { 1 };
        BackboneConfig {
            width: self.width,
            enc_blocks: self.enc_blocks.clone(),
            middle_blocks: self.middle_blocks,
            dec_blocks: self.dec_blocks.clone(),
            in_channels: ch,
            out_channels: ch,
            block: self.block(),
        }
    }

    pub fn unrolled(&self) -> UnrolledConfig {
        UnrolledConfig {
            iterations: self.iterations,
            mu_init: self.mu_init,
            share_weights: self.share_weights,
            fixed_mu: self.fixed_mu,
            residual_in_regularizer: self.residual_in_regularizer,
            backbone: self.backbone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.slices_per_volume == 0 {
            return Err(Error::Config("epochs, batch_size and slices_per_volume must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::Config(format!("need 0 <= lr_min <= lr and lr > 0, got lr={} lr_min={}", self.lr, self.lr_min)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("beta1, beta2 must lie in [0,1) and eps must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        match self.task {
            Task::Recon => self.unrolled().validate(),
            _ => self.backbone().validate(),
        }
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("task", self.task.as_str().into());
        kv("model", self.model.as_str().into());
        kv("width", self.width.to_string());
        kv("enc_blocks", list(&self.enc_blocks));
        kv("middle_blocks", self.middle_blocks.to_string());
        kv("dec_blocks", list(&self.dec_blocks));
        kv("expansion", self.expansion.to_string());
        kv("dw_kernel", self.dw_kernel.to_string());
        kv("channel_attention", self.channel_attention.to_string());
        kv("kl", self.kl.to_string());
        kv("ks", self.ks.to_string());
        kv("groups", self.groups.to_string());
        kv("normalize_kernels", self.normalize_kernels.to_string());
        kv("iterations", self.iterations.to_string());
        kv("mu_init", self.mu_init.to_string());
        kv("share_weights", self.share_weights.to_string());
        kv("fixed_mu", self.fixed_mu.to_string());
        kv("residual_in_regularizer", self.residual_in_regularizer.to_string());
        kv("data", self.data.display().to_string());
        kv("seed", self.seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("max_train", self.max_train.to_string());
        kv("lr", self.lr.to_string());
        kv("lr_min", self.lr_min.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("eps", self.eps.to_string());
        kv("clip_norm", self.clip_norm.to_string());
        kv("slices_per_volume", self.slices_per_volume.to_string());
        s
    }

    /// Parses `key=value` lines; `#` starts a comment line. `task` and
    /// `model` select the defaults the remaining keys override.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
            pairs.push((lineno + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let find = |key: &str| pairs.iter().rev().find(|p| p.1 == key).map(|p| p.2.as_str());
        let task = Task::parse(find("task").unwrap_or("recon"))?;
        let model = ModelKind::parse(find("model").unwrap_or("naf"))?;
        let mut c = ExperimentConfig::new(task, model);
        for (lineno, k, v) in &pairs {
            let err = |what: &str| Error::Config(format!("line {lineno}: `{k}` expects {what}, got `{v}`"));
            let uint = || v.parse::<usize>().map_err(|_| err("a non-negative integer"));
            let real = || v.parse::<f64>().map_err(|_| err("a number"));
            let flag = || v.parse::<bool>().map_err(|_| err("true or false"));
            let list = || -> Result<Vec<usize>> {
                if v.is_empty() {
                    return Ok(Vec::new());
                }
                v.split(',').map(|p| p.trim().parse::<usize>().map_err(|_| err("a comma-separated list"))).collect()
            };
            match k.as_str() {
                "task" | "model" => {}
                "width" => c.width = uint()?,
                "enc_blocks" => c.enc_blocks = list()?,
                "middle_blocks" => c.middle_blocks = uint()?,
                "dec_blocks" => c.dec_blocks = list()?,
                "expansion" => c.expansion = uint()?,
                "dw_kernel" => c.dw_kernel = uint()?,
                "channel_attention" => c.channel_attention = flag()?,
                "kl" => c.kl = uint()?,
                "ks" => c.ks = uint()?,
                "groups" => c.groups = uint()?,
                "normalize_kernels" => c.normalize_kernels = flag()?,
                "iterations" => c.iterations = uint()?,
                "mu_init" => c.mu_init = real()?,
                "share_weights" => c.share_weights = flag()?,
                "fixed_mu" => c.fixed_mu = flag()?,
                "residual_in_regularizer" => c.residual_in_regularizer = flag()?,
                "data" => c.data = PathBuf::from(v),
                "seed" => c.seed = v.parse().map_err(|_| err("a non-negative integer"))?,
                "epochs" => c.epochs = uint()?,
                "batch_size" => c.batch_size = uint()?,
                "max_train" => c.max_train = uint()?,
                "lr" => c.lr = real()?,
                "lr_min" => c.lr_min = real()?,
                "beta1" => c.beta1 = real()?,
                "beta2" => c.beta2 = real()?,
                "eps" => c.eps = real()?,
                "clip_norm" => c.clip_norm = real()?,
                "slices_per_volume" => c.slices_per_volume = uint()?,
                _ => return Err(Error::Config(format!("line {lineno}: unknown key `{k}`"))),
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
