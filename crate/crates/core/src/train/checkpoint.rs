//! Checkpoint files.
//!
//! A text header (`mrimix-checkpoint`, `version=`, training progress and
//! the experiment config as `cfg.<key>=<value>` lines) ends at the first
//! blank line. Each tensor follows as its name on one line and one MRT1
//! record: parameters first, then optimizer moments under
//! `__adam_m/<name>` and `__adam_v/<name>`, all in lexicographic order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::ExperimentConfig;
use super::model::init_model;
use super::optim::AdamState;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::io::{encode_real, read_record};
use crate::scalar::Scalar;

const MAGIC: &str = "mrimix-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const M_PREFIX: &str = "__adam_m/";
const V_PREFIX: &str = "__adam_v/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ExperimentConfig,
    pub params: ParamStore<T>,
    pub adam: AdamState<T>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub best_val_psnr: f64,
    pub best_epoch: usize,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut h = String::new();
        let _ = writeln!(h, "{MAGIC}");
        let _ = writeln!(h, "version={CHECKPOINT_VERSION}");
        let _ = writeln!(h, "dtype={}", T::DTYPE.code());
        let _ = writeln!(h, "epoch={}", self.epoch);
        let _ = writeln!(h, "best_val_psnr={}", self.best_val_psnr);
        let _ = writeln!(h, "best_epoch={}", self.best_epoch);
        let _ = writeln!(h, "adam_step={}", self.adam.step);
        let _ = writeln!(h, "adam_lr={}", self.adam.lr);
        for line in self.config.to_text().lines() {
            let _ = writeln!(h, "cfg.{line}");
        }
        h.push('\n');
        let mut out = h.into_bytes();
        let mut put = |name: &str, t: &crate::Tensor<T>| -> Result<()> {
            out.extend_from_slice(name.as_bytes());
            out.push(b'\n');
            out.extend(encode_real(t)?);
            Ok(())
        };
        for (name, t) in self.params.iter() {
            put(name, t)?;
        }
        for (name, t) in &self.adam.m {
            put(&format!("{M_PREFIX}{name}"), t)?;
        }
        for (name, t) in &self.adam.v {
            put(&format!("{V_PREFIX}{name}"), t)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        let end = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| bad("checkpoint header is not terminated".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file".into()));
        }
        let mut cfg_text = String::new();
        let mut kv = std::collections::BTreeMap::new();
        for line in lines {
            if let Some(c) = line.strip_prefix("cfg.") {
                cfg_text.push_str(c);
                cfg_text.push('\n');
            } else if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| bad(format!("header lacks `{k}`")));
        let version: u32 = get("version")?.parse().map_err(|_| bad("bad version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version(format!(
                "{}: checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}",
                path.display()
            )));
        }
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
        let config = ExperimentConfig::parse(&cfg_text).map_err(|e| bad(format!("embedded config: {e}")))?;

        let mut params = ParamStore::new();
        let mut adam = AdamState::new(num("adam_lr")?, config.beta1, config.beta2, config.eps);
        adam.step = num("adam_step")? as u64;
        let mut rest = &bytes[end + 2..];
        while !rest.is_empty() {
            let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated tensor name".into()))?;
            let name = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("tensor name is not UTF-8".into()))?.to_string();
            rest = &rest[nl + 1..];
            let rec = read_record(&mut rest, path)?.ok_or_else(|| bad(format!("missing record for `{name}`")))?;
            let t = rec.to::<T>();
            if let Some(n) = name.strip_prefix(M_PREFIX) {
                adam.m.insert(n.to_string(), t);
            } else if let Some(n) = name.strip_prefix(V_PREFIX) {
                adam.v.insert(n.to_string(), t);
            } else {
                params.insert(name, t)?;
            }
        }
        let ck = Checkpoint {
            config,
            params,
            adam,
            epoch: num("epoch")? as usize,
            best_val_psnr: num("best_val_psnr")?,
            best_epoch: num("best_epoch")? as usize,
        };
        ck.check_against_config(path)?;
        Ok(ck)
    }

    /// Parameter names and shapes must be exactly those the config builds.
    fn check_against_config(&self, path: &Path) -> Result<()> {
        let fresh = init_model::<T>(&self.config)?;
        let mismatch = |what: String| Error::Version(format!("{}: checkpoint does not match its config: {what}", path.display()));
        for (name, t) in fresh.iter() {
            match self.params.get(name) {
                Ok(p) if p.shape() == t.shape() => {}
                Ok(p) => return Err(mismatch(format!("`{name}` has shape {:?}, expected {:?}", p.shape(), t.shape()))),
                Err(_) => return Err(mismatch(format!("missing parameter `{name}`"))),
            }
        }
        if let Some(extra) = self.params.names().find(|n| !fresh.contains(n)) {
            return Err(mismatch(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
