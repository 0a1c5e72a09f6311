//! On-disk synthetic datasets.
//!
//! ```text
//! <root>/<task>/manifest.txt
//! <root>/<task>/<split>/<index>.mrt       clean reference
//! <root>/<task>/<split>/<index>.deg.mrt   degraded input
//! <root>/<task>/<split>/<index>.aux.mrt   recon: mask (f32 [W]) then coil maps (complex64 [C,H,W])
//!                                         denoise: g-field (f32 [H,W]); sr: absent
//! ```
//!
//! The manifest holds `key=value` parameter lines followed by one
//! `<split> <index> <seed>` line per sample.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::degrade::{degrade_denoise, degrade_recon, degrade_sr, make_g_field_with, GFieldParams};
use super::mix_seed;
use super::phantom::{make_phantom, PhantomSpec};
use crate::error::{Error, Result};
use crate::io::{self, encode_complex, encode_real_as};
use crate::mri::{self, generate_mask, make_coil_maps, CoilSensitivities, SamplingMask};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Recon,
    Sr,
    Denoise,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Recon => "recon",
            Task::Sr => "sr",
            Task::Denoise => "denoise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "recon" => Ok(Task::Recon),
            "sr" => Ok(Task::Sr),
            "denoise" => Ok(Task::Denoise),
            _ => Err(Error::Config(format!("unknown task `{s}` (expected recon, sr or denoise)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }

    fn code(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub task: Task,
    pub size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    pub n_ellipses: usize,
    pub accel: u32,
    pub center_frac: f64,
    pub coils: usize,
    pub noise_sigma: f64,
    pub keep_frac: f64,
    pub sigma0: f64,
    pub alpha: f64,
}

impl DatasetParams {
    pub fn new(task: Task) -> Self {
        DatasetParams {
            task,
            size: 64,
            n_train: 32,
            n_val: 16,
            n_test: 64,
            seed: 0,
            n_ellipses: 10,
            accel: 4,
            center_frac: 0.08,
            coils: 1,
            noise_sigma: 0.0,
            keep_frac: 0.0625,
            sigma0: 0.05,
            alpha: 3.0,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    fn to_lines(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task={}", self.task.as_str());
        let _ = writeln!(s, "size={}", self.size);
        let _ = writeln!(s, "n_train={}", self.n_train);
        let _ = writeln!(s, "n_val={}", self.n_val);
        let _ = writeln!(s, "n_test={}", self.n_test);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "n_ellipses={}", self.n_ellipses);
        match self.task {
            Task::Recon => {
                let _ = writeln!(s, "accel={}", self.accel);
                let _ = writeln!(s, "center_frac={}", self.center_frac);
                let _ = writeln!(s, "coils={}", self.coils);
                let _ = writeln!(s, "noise_sigma={}", self.noise_sigma);
            }
            Task::Sr => {
                let _ = writeln!(s, "keep_frac={}", self.keep_frac);
            }
            Task::Denoise => {
                let _ = writeln!(s, "sigma0={}", self.sigma0);
                let _ = writeln!(s, "alpha={}", self.alpha);
            }
        }
        s
    }

    fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::Parameter(format!("image size must be >= 16, got {}", self.size)));
        }
        if self.task == Task::Recon && self.coils == 0 {
            return Err(Error::Parameter("coils must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub params: DatasetParams,
    pub entries: Vec<(Split, usize, u64)>,
}

impl DatasetManifest {
    pub fn render(&self) -> String {
        let mut s = String::from("# mrimix dataset manifest\n");
        s.push_str(&self.params.to_lines());
        for (split, idx, seed) in &self.entries {
            let _ = writeln!(s, "{} {idx} {seed}", split.as_str());
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        let mut params: Option<DatasetParams> = None;
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                let (key, value) = (key.trim(), value.trim());
                if key == "task" {
                    params = Some(DatasetParams::new(Task::parse(value)?));
                    continue;
                }
                let p = params.as_mut().ok_or_else(|| bad(format!("line {}: `task=` must come first", lineno + 1)))?;
                let num = |v: &str| -> Result<f64> {
                    v.parse::<f64>().map_err(|_| bad(format!("line {}: bad number `{v}`", lineno + 1)))
                };
                let int = |v: &str| -> Result<u64> {
                    v.parse::<u64>().map_err(|_| bad(format!("line {}: bad integer `{v}`", lineno + 1)))
                };
                match key {
                    "size" => p.size = int(value)? as usize,
                    "n_train" => p.n_train = int(value)? as usize,
                    "n_val" => p.n_val = int(value)? as usize,
                    "n_test" => p.n_test = int(value)? as usize,
                    "seed" => p.seed = int(value)?,
                    "n_ellipses" => p.n_ellipses = int(value)? as usize,
                    "accel" => p.accel = int(value)? as u32,
                    "center_frac" => p.center_frac = num(value)?,
                    "coils" => p.coils = int(value)? as usize,
                    "noise_sigma" => p.noise_sigma = num(value)?,
                    "keep_frac" => p.keep_frac = num(value)?,
                    "sigma0" => p.sigma0 = num(value)?,
                    "alpha" => p.alpha = num(value)?,
                    other => return Err(bad(format!("line {}: unknown key `{other}`", lineno + 1))),
                }
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad(format!("line {}: expected `<split> <index> <seed>`", lineno + 1)));
            }
            let split = Split::parse(parts[0]).map_err(|e| bad(e.to_string()))?;
            let idx = parts[1].parse().map_err(|_| bad(format!("line {}: bad index", lineno + 1)))?;
            let seed = parts[2].parse().map_err(|_| bad(format!("line {}: bad seed", lineno + 1)))?;
            entries.push((split, idx, seed));
        }
        let params = params.ok_or_else(|| bad("missing `task=` line".into()))?;
        Ok(DatasetManifest { params, entries })
    }

    pub fn load(root: &Path, task: Task) -> Result<Self> {
        let path = task_dir(root, task).join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, &path)
    }
}

pub fn task_dir(root: &Path, task: Task) -> PathBuf {
    root.join(task.as_str())
}

fn sample_path(root: &Path, task: Task, split: Split, index: usize, suffix: &str) -> PathBuf {
    task_dir(root, task).join(split.as_str()).join(format!("{index}{suffix}"))
}

/// Seed of sample `index` in `split`, derived from the dataset seed.
pub fn sample_seed(base: u64, split: Split, index: usize) -> u64 {
    mix_seed(mix_seed(base ^ (split.code() << 56)) ^ index as u64)
}

/// Auxiliary per-sample physics.
#[derive(Debug, Clone, PartialEq)]
pub enum Aux<T> {
    None,
    Recon { mask: SamplingMask, coils: CoilSensitivities<T> },
    Denoise { g: Tensor<T> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    /// recon: complex image `[H,W,2]`; sr/denoise: magnitude `[H,W]`.
    pub clean: Tensor<T>,
    /// recon: k-space `[C,H,W,2]`; sr/denoise: `[H,W]`.
    pub degraded: Tensor<T>,
    pub aux: Aux<T>,
}

impl<T: Scalar> Sample<T> {
    /// Magnitude target the metrics are computed against.
    pub fn reference(&self) -> Result<Tensor<T>> {
        match self.aux {
            Aux::Recon { .. } => mri::magnitude(&self.clean),
            _ => Ok(self.clean.clone()),
        }
    }

    /// Model-free estimate: zero-filled magnitude for recon, the degraded
    /// image otherwise.
    pub fn baseline(&self) -> Result<Tensor<T>> {
        match &self.aux {
            Aux::Recon { coils, .. } => mri::magnitude(&mri::reduce(&mri::ifft2c(&self.degraded)?, coils)?),
            _ => Ok(self.degraded.clone()),
        }
    }
}

fn synthesize(p: &DatasetParams, split: Split, index: usize) -> Result<(u64, Tensor<f32>, Tensor<f32>, Vec<u8>, bool)> {
    let seed = sample_seed(p.seed, split, index);
    let n = p.size;
    let phantom: Tensor<f64> =
        make_phantom(&PhantomSpec { height: n, width: n, n_ellipses: p.n_ellipses, seed: mix_seed(seed ^ 1) })?;
    match p.task {
        Task::Recon => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 2));
            let (a, b) = (rng.random_range(-PI / 2.0..PI / 2.0), rng.random_range(-PI / 2.0..PI / 2.0));
            let x = Tensor::from_fn(&[n, n, 2], |i| {
                let m = phantom.get(&[i[0], i[1]]);
                let phi = a * (i[1] as f64 / n as f64 - 0.5) + b * (i[0] as f64 / n as f64 - 0.5);
                if i[2] == 0 { m * phi.cos() } else { m * phi.sin() }
            });
            // Stored data is single precision; degrade from the rounded image so
            // a full mask reproduces the stored reference.
            let x: Tensor<f64> = x.cast::<f32>().cast();
            let mask = generate_mask(n, p.accel, p.center_frac, mix_seed(seed ^ 3))?;
            let coils: CoilSensitivities<f64> = if p.coils == 1 {
                CoilSensitivities::uniform(n, n)
            } else {
                make_coil_maps::<f32>(p.coils, n, n, mix_seed(seed ^ 4))?.cast()
            };
            let k = degrade_recon(&x, &coils, &mask, p.noise_sigma, mix_seed(seed ^ 5))?;
            let mut aux = encode_real_as(&mask.to_tensor::<f32>(), DType::Real32)?;
            aux.extend(encode_complex(coils.maps())?);
            Ok((seed, x.cast(), k.cast(), aux, true))
        }
        Task::Sr => {
            let lowpass = degrade_sr(&mri::real_to_complex(&phantom), p.keep_frac)?;
            let y = mri::magnitude(&lowpass)?;
            Ok((seed, phantom.cast(), y.cast(), Vec::new(), false))
        }
        Task::Denoise => {
            let gp = GFieldParams { sigma0: p.sigma0, alpha: p.alpha, ..GFieldParams::default() };
            let field = make_g_field_with::<f64>(n, n, mix_seed(seed ^ 6), &gp)?;
            let y = degrade_denoise(&phantom, &field, mix_seed(seed ^ 7))?;
            Ok((seed, phantom.cast(), y.cast(), encode_real_as(&field.g, DType::Real32)?, true))
        }
    }
}

/// Writes every split of a dataset below `<root>/<task>/`, replacing any
/// previous contents of that directory.
pub fn generate_dataset(p: &DatasetParams, root: &Path) -> Result<DatasetManifest> {
    p.validate()?;
    let dir = task_dir(root, p.task);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut entries = Vec::new();
    for split in Split::ALL {
        let sdir = dir.join(split.as_str());
        fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        for index in 0..p.count(split) {
            let (seed, clean, degraded, aux, has_aux) = synthesize(p, split, index)?;
            let complex = p.task == Task::Recon;
            let enc = |t: &Tensor<f32>| if complex { encode_complex(t) } else { encode_real_as(t, DType::Real32) };
            io::write_file(&sample_path(root, p.task, split, index, ".mrt"), &enc(&clean)?)?;
            io::write_file(&sample_path(root, p.task, split, index, ".deg.mrt"), &enc(&degraded)?)?;
            if has_aux {
                io::write_file(&sample_path(root, p.task, split, index, ".aux.mrt"), &aux)?;
            }
            entries.push((split, index, seed));
        }
    }
    let manifest = DatasetManifest { params: p.clone(), entries };
    let mpath = dir.join("manifest.txt");
    fs::write(&mpath, manifest.render()).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Loads every sample of `split`, in index order.
pub fn load_split<T: Scalar>(root: &Path, task: Task, split: Split) -> Result<(DatasetManifest, Vec<Sample<T>>)> {
    let manifest = DatasetManifest::load(root, task)?;
    let p = &manifest.params;
    let mut out = Vec::new();
    for &(s, index, seed) in manifest.entries.iter().filter(|e| e.0 == split) {
        let clean = io::load_one(&sample_path(root, task, s, index, ".mrt"))?.to::<T>();
        let degraded = io::load_one(&sample_path(root, task, s, index, ".deg.mrt"))?.to::<T>();
        let aux = match task {
            Task::Sr => Aux::None,
            Task::Recon => {
                let apath = sample_path(root, task, s, index, ".aux.mrt");
                let recs = io::load_all(&apath)?;
                if recs.len() != 2 {
                    return Err(Error::format(&apath, "recon aux must hold a mask and coil maps"));
                }
                let mask = SamplingMask::from_tensor(&recs[0].tensor, p.accel, p.center_frac)?;
                let coils = CoilSensitivities::new(recs[1].to::<T>())?;
                Aux::Recon { mask, coils }
            }
            Task::Denoise => Aux::Denoise { g: io::load_one(&sample_path(root, task, s, index, ".aux.mrt"))?.to::<T>() },
        };
        out.push(Sample { split: s, index, seed, clean, degraded, aux });
    }
    Ok((manifest, out))
}
