//! Image quality metrics and the per-volume CSV report.
//!
//! SSIM uses a uniform `win x win` window (default 7), `k1 = 0.01`,
//! `k2 = 0.03`, sample covariance (`N / (N - 1)`) and only windows fully
//! inside the image. Volumes are `[S,H,W]` stacks of magnitude slices.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeWindow {
    /// 2D windows on every slice, one data range for the whole volume.
    Planar,
    /// `win x win x min(win, S)` windows through the stack.
    Cubic,
}

impl VolumeWindow {
    pub fn as_str(self) -> &'static str {
        match self {
            VolumeWindow::Planar => "2d",
            VolumeWindow::Cubic => "3d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "2d" => Ok(VolumeWindow::Planar),
            "3d" => Ok(VolumeWindow::Cubic),
            _ => Err(Error::Config(format!("unknown volumetric window `{s}` (expected 2d or 3d)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimOptions {
    pub win: usize,
    pub k1: f64,
    pub k2: f64,
    pub volume_window: VolumeWindow,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions { win: 7, k1: 0.01, k2: 0.03, volume_window: VolumeWindow::Planar }
    }
}

fn check_pair<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>) -> Result<()> {
    if est.shape() != reference.shape() {
        return Err(shape_err!("estimate {:?} vs reference {:?}", est.shape(), reference.shape()));
    }
    if est.is_empty() {
        return Err(shape_err!("metrics need at least one value"));
    }
    Ok(())
}

fn sq_err<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>) -> f64 {
    est.data().iter().zip(reference.data()).map(|(&a, &b)| (a.to_f64_lossy() - b.to_f64_lossy()).powi(2)).sum()
}

pub fn mse<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    check_pair(est, reference)?;
    Ok(sq_err(est, reference) / est.len() as f64)
}

/// `10 log10(peak^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Parameter(format!("PSNR peak must be positive, got {peak}")));
    }
    let m = mse(est, reference)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / m).log10() })
}

/// `|est - ref|^2 / |ref|^2`.
pub fn nmse<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    check_pair(est, reference)?;
    let denom: f64 = reference.data().iter().map(|&v| v.to_f64_lossy().powi(2)).sum();
    if denom == 0.0 {
        return Err(Error::Undefined("NMSE against an all-zero reference".into()));
    }
    Ok(sq_err(est, reference) / denom)
}

pub fn rmse<T: Scalar>(est: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    Ok(mse(est, reference)?.sqrt())
}

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64_lossy()).collect()
}

/// Sum and count of per-window SSIM values over a `[D,H,W]` block with
/// `wd x win x win` windows.
fn ssim_accumulate(a: &[f64], b: &[f64], dims: [usize; 3], wd: usize, range: f64, o: &SsimOptions) -> (f64, usize) {
    let [d, h, w] = dims;
    let win = o.win;
    let np = (wd * win * win) as f64;
    let cov_norm = np / (np - 1.0);
    let c1 = (o.k1 * range).powi(2);
    let c2 = (o.k2 * range).powi(2);
    // Summed-volume tables of a, b, a^2, b^2, ab with a zero border.
    let (sd, sh, sw) = (d + 1, h + 1, w + 1);
    let mut tables = vec![[0.0f64; 5]; sd * sh * sw];
    let at = |z: usize, y: usize, x: usize| (z * sh + y) * sw + x;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                let v = [a[i], b[i], a[i] * a[i], b[i] * b[i], a[i] * b[i]];
                let mut cell = [0.0; 5];
                for (q, c) in cell.iter_mut().enumerate() {
                    *c = v[q] + tables[at(z, y + 1, x + 1)][q] + tables[at(z + 1, y, x + 1)][q]
                        + tables[at(z + 1, y + 1, x)][q]
                        - tables[at(z, y, x + 1)][q]
                        - tables[at(z, y + 1, x)][q]
                        - tables[at(z + 1, y, x)][q]
                        + tables[at(z, y, x)][q];
                }
                tables[at(z + 1, y + 1, x + 1)] = cell;
            }
        }
    }
    let mut total = 0.0;
    let mut count = 0;
    for z in 0..=d - wd {
        for y in 0..=h - win {
            for x in 0..=w - win {
                let (z1, y1, x1) = (z + wd, y + win, x + win);
                let mut s = [0.0; 5];
                for (q, v) in s.iter_mut().enumerate() {
                    *v = tables[at(z1, y1, x1)][q] - tables[at(z, y1, x1)][q] - tables[at(z1, y, x1)][q]
                        - tables[at(z1, y1, x)][q]
                        + tables[at(z, y, x1)][q]
                        + tables[at(z, y1, x)][q]
                        + tables[at(z1, y, x)][q]
                        - tables[at(z, y, x)][q];
                    *v /= np;
                }
                let (ma, mb) = (s[0], s[1]);
                let va = cov_norm * (s[2] - ma * ma);
                let vb = cov_norm * (s[3] - mb * mb);
                let vab = cov_norm * (s[4] - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    (total, count)
}

/// Mean SSIM of two `[H,W]` images.
pub fn ssim_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, data_range: f64, o: &SsimOptions) -> Result<f64> {
    check_pair(a, b)?;
    if a.ndim() != 2 {
        return Err(shape_err!("ssim_map expects [H,W], got {:?}", a.shape()));
    }
    check_ssim(a.shape()[0], a.shape()[1], data_range, o)?;
    let (s, n) = ssim_accumulate(&to_f64(a), &to_f64(b), [1, a.shape()[0], a.shape()[1]], 1, data_range, o);
    Ok(s / n as f64)
}

fn check_ssim(h: usize, w: usize, data_range: f64, o: &SsimOptions) -> Result<()> {
    if !(data_range > 0.0) {
        return Err(Error::Parameter(format!("SSIM data range must be positive, got {data_range}")));
    }
    if o.win < 2 || h < o.win || w < o.win {
        return Err(Error::Parameter(format!("{h}x{w} image is smaller than the {0}x{0} SSIM window", o.win)));
    }
    Ok(())
}

/// Reference and estimate stacks `[S,H,W]` of one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumePair<T> {
    pub id: String,
    pub reference: Tensor<T>,
    pub estimate: Tensor<T>,
}

impl<T: Scalar> VolumePair<T> {
    pub fn new(id: impl Into<String>, reference: Tensor<T>, estimate: Tensor<T>) -> Result<Self> {
        check_pair(&estimate, &reference)?;
        if reference.ndim() != 3 {
            return Err(shape_err!("volume must be [S,H,W], got {:?}", reference.shape()));
        }
        Ok(VolumePair { id: id.into(), reference, estimate })
    }

    fn dims(&self) -> [usize; 3] {
        let s = self.reference.shape();
        [s[0], s[1], s[2]]
    }
}

/// Per-slice SSIM with each slice's own reference maximum as data range,
/// averaged over slices. Slices with a non-positive maximum are skipped;
/// the second value counts them.
pub fn ssim_slice_wise<T: Scalar>(v: &VolumePair<T>, o: &SsimOptions) -> Result<(f64, usize)> {
    let [s, h, w] = v.dims();
    let (r, e) = (to_f64(&v.reference), to_f64(&v.estimate));
    let mut total = 0.0;
    let mut used = 0;
    for z in 0..s {
        let rs = &r[z * h * w..(z + 1) * h * w];
        let es = &e[z * h * w..(z + 1) * h * w];
        let max = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > 0.0) {
            continue;
        }
        check_ssim(h, w, max, o)?;
        let (sum, n) = ssim_accumulate(rs, es, [1, h, w], 1, max, o);
        total += sum / n as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Undefined(format!("volume `{}` has no slice with a positive maximum", v.id)));
    }
    Ok((total / used as f64, s - used))
}

/// SSIM over the whole volume with the volume maximum as data range.
pub fn ssim_volumetric<T: Scalar>(v: &VolumePair<T>, o: &SsimOptions) -> Result<f64> {
    let [s, h, w] = v.dims();
    let max = v.reference.max().to_f64_lossy();
    if !(max > 0.0) {
        return Err(Error::Undefined(format!("volume `{}` has a non-positive maximum", v.id)));
    }
    check_ssim(h, w, max, o)?;
    let (r, e) = (to_f64(&v.reference), to_f64(&v.estimate));
    let (sum, n) = match o.volume_window {
        VolumeWindow::Planar => {
            let mut acc = (0.0, 0);
            for z in 0..s {
                let sl = z * h * w..(z + 1) * h * w;
                let (a, b) = ssim_accumulate(&r[sl.clone()], &e[sl], [1, h, w], 1, max, o);
                acc = (acc.0 + a, acc.1 + b);
            }
            acc
        }
        VolumeWindow::Cubic => ssim_accumulate(&r, &e, [s, h, w], o.win.min(s), max, o),
    };
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim_slice: f64,
    pub ssim_vol: f64,
    pub nmse: f64,
    pub rmse: f64,
    pub skipped_slices: usize,
}

/// All metrics of one volume; PSNR peak is the reference volume maximum.
pub fn volume_metrics<T: Scalar>(v: &VolumePair<T>, o: &SsimOptions) -> Result<VolumeMetrics> {
    let peak = v.reference.max().to_f64_lossy();
    let (ssim_slice, skipped_slices) = ssim_slice_wise(v, o)?;
    Ok(VolumeMetrics {
        id: v.id.clone(),
        psnr: psnr(&v.estimate, &v.reference, peak)?,
        ssim_slice,
        ssim_vol: ssim_volumetric(v, o)?,
        nmse: nmse(&v.estimate, &v.reference)?,
        rmse: rmse(&v.estimate, &v.reference)?,
        skipped_slices,
    })
}

pub const REPORT_COLUMNS: [&str; 6] = ["volume", "psnr", "ssim_slice", "ssim_vol", "nmse", "rmse"];

/// Per-volume metrics plus `key=value` annotations written as `#` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub volume_window: VolumeWindow,
    pub notes: Vec<(String, String)>,
    pub volumes: Vec<VolumeMetrics>,
}

impl MetricsReport {
    pub fn compute<T: Scalar>(pairs: &[VolumePair<T>], o: &SsimOptions) -> Result<Self> {
        let volumes = pairs.iter().map(|p| volume_metrics(p, o)).collect::<Result<Vec<_>>>()?;
        Ok(MetricsReport { volume_window: o.volume_window, notes: Vec::new(), volumes })
    }

    pub fn note(&self, key: &str) -> Option<&str> {
        self.notes.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn skipped_slices(&self) -> usize {
        self.volumes.iter().map(|v| v.skipped_slices).sum()
    }

    /// Arithmetic mean of every column over volumes.
    pub fn average(&self) -> Result<VolumeMetrics> {
        if self.volumes.is_empty() {
            return Err(Error::Undefined("average of an empty report".into()));
        }
        let n = self.volumes.len() as f64;
        let mean = |f: fn(&VolumeMetrics) -> f64| self.volumes.iter().map(f).sum::<f64>() / n;
        Ok(VolumeMetrics {
            id: "AVERAGE".into(),
            psnr: mean(|v| v.psnr),
            ssim_slice: mean(|v| v.ssim_slice),
            ssim_vol: mean(|v| v.ssim_vol),
            nmse: mean(|v| v.nmse),
            rmse: mean(|v| v.rmse),
            skipped_slices: self.skipped_slices(),
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut s = String::new();
        let _ = writeln!(s, "# ssim_vol={}", self.volume_window.as_str());
        let _ = writeln!(s, "# skipped_slices={}", self.skipped_slices());
        for (k, v) in &self.notes {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str(&REPORT_COLUMNS.join(","));
        s.push('\n');
        for v in self.volumes.iter().chain(std::iter::once(&self.average()?)) {
            let _ = writeln!(s, "{},{},{},{},{},{}", v.id, v.psnr, v.ssim_slice, v.ssim_vol, v.nmse, v.rmse);
        }
        Ok(s)
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        let mut volume_window = VolumeWindow::Planar;
        let mut notes = Vec::new();
        let mut volumes = Vec::new();
        let mut header = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    match k {
                        "ssim_vol" => volume_window = VolumeWindow::parse(v).map_err(|e| bad(e.to_string()))?,
                        "skipped_slices" => {}
                        _ => notes.push((k.to_string(), v.to_string())),
                    }
                }
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if !header {
                if cells != REPORT_COLUMNS {
                    return Err(bad(format!("line {}: expected header `{}`", lineno + 1, REPORT_COLUMNS.join(","))));
                }
                header = true;
                continue;
            }
            if cells.len() != REPORT_COLUMNS.len() {
                return Err(bad(format!("line {}: expected {} columns", lineno + 1, REPORT_COLUMNS.len())));
            }
            if cells[0] == "AVERAGE" {
                continue;
            }
            let num = |i: usize| -> Result<f64> {
                cells[i].parse().map_err(|_| bad(format!("line {}: bad number `{}`", lineno + 1, cells[i])))
            };
            volumes.push(VolumeMetrics {
                id: cells[0].to_string(),
                psnr: num(1)?,
                ssim_slice: num(2)?,
                ssim_vol: num(3)?,
                nmse: num(4)?,
                rmse: num(5)?,
                skipped_slices: 0,
            });
        }
        if !header {
            return Err(bad("missing header row".into()));
        }
        Ok(MetricsReport { volume_window, notes, volumes })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }
}
