//! `mrimix`: dataset generation, training, evaluation and comparison.
//!
//! Exit status: 0 on success, 1 when inputs fail validation (bad flags or
//! config, failed self-test, model worse than its degraded input), 2 on
//! I/O or file-format errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrimix::metrics::MetricsReport;
use mrimix::report::Comparison;
use mrimix::selftest::run_selftest;
use mrimix::sim::{generate_dataset, DatasetParams, Split, Task};
use mrimix::train::{evaluate, evaluate_baseline, train, ExperimentConfig, TrainOptions};
use mrimix::Error;

#[derive(Parser)]
#[command(name = "mrimix", version, about = "Synthetic MRI restoration testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (all three splits and a manifest).
    GenData(GenData),
    /// Train a model described by a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the model-free baseline) and write a metrics CSV.
    Eval(EvalArgs),
    /// Merge metric CSVs of several runs into a table, CSV and SVG chart.
    Compare(CompareArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct GenData {
    /// recon, sr or denoise.
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 32)]
    n_train: usize,
    #[arg(long, default_value_t = 16)]
    n_val: usize,
    #[arg(long, default_value_t = 64)]
    n_test: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset root; the task directory is created below it.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Random ellipses per phantom.
    #[arg(long, default_value_t = 10)]
    n_ellipses: usize,
    /// recon: acceleration factor.
    #[arg(long, default_value_t = 4)]
    accel: u32,
    /// recon: fully sampled central fraction of columns.
    #[arg(long, default_value_t = 0.08)]
    center_frac: f64,
    /// recon: receive coils (1 = single coil).
    #[arg(long, default_value_t = 1)]
    coils: usize,
    /// recon: k-space noise standard deviation per real component.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// sr: kept fraction of k-space (area of the central block).
    #[arg(long, default_value_t = 0.0625)]
    keep_frac: f64,
    /// denoise: base noise level.
    #[arg(long, default_value_t = 0.05)]
    sigma0: f64,
    /// denoise: noise growth exponent.
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (`key=value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Directory for checkpoints and the training log.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides the config epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from `<out>/last.ckpt`.
    #[arg(long)]
    resume: bool,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint; omit with --baseline.
    #[arg(long, required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Dataset root (defaults to the one recorded in the checkpoint).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Evaluate the model-free estimate (zero-filled / degraded input).
    #[arg(long, conflicts_with = "checkpoint", requires_all = ["data", "task"])]
    baseline: bool,
    /// Task of the baseline dataset.
    #[arg(long)]
    task: Option<String>,
    /// Slices per synthetic volume for the baseline.
    #[arg(long, default_value_t = 8)]
    slices_per_volume: usize,
    /// Accepted for interface uniformity; evaluation draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    /// Metric CSVs to compare; the first is the reference for deltas.
    #[arg(long, num_args = 2.., required = true)]
    runs: Vec<PathBuf>,
    /// Output directory for comparison.csv, comparison.svg and comparison.md.
    #[arg(long)]
    out: PathBuf,
    /// Accepted for interface uniformity; comparison draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the check results to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Validation(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_io() { Failure::Io(e.to_string()) } else { Failure::Validation(e.to_string()) }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn gen_data(a: GenData) -> Result<(), Failure> {
    let task = Task::parse(&a.task)?;
    if a.out.exists() && !a.force {
        let non_empty = fs::read_dir(&a.out).map_err(|e| Error::io(&a.out, e))?.next().is_some();
        if non_empty {
            return Err(Failure::Validation(format!(
                "{} is not empty; pass --force to overwrite",
                a.out.display()
            )));
        }
    }
    let p = DatasetParams {
        task,
        size: a.size,
        n_train: a.n_train,
        n_val: a.n_val,
        n_test: a.n_test,
        seed: a.seed,
        n_ellipses: a.n_ellipses,
        accel: a.accel,
        center_frac: a.center_frac,
        coils: a.coils,
        noise_sigma: a.noise_sigma,
        keep_frac: a.keep_frac,
        sigma0: a.sigma0,
        alpha: a.alpha,
    };
    let m = generate_dataset(&p, &a.out)?;
    println!("{}", a.out.join(task.as_str()).display());
    eprintln!("wrote {} samples", m.entries.len());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.data {
        cfg.data = d;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    cfg.save(&a.out.join("config.txt"))?;
    let opts = TrainOptions { resume: a.resume, epoch_limit: None, verbose: !a.quiet };
    let s = train(&cfg, &a.out, &opts)?;
    println!("{}", s.best_checkpoint.display());
    eprintln!(
        "best val PSNR {:.3} dB at epoch {} (model-free baseline {:.3} dB)",
        s.best_val_psnr, s.best_epoch, s.baseline_val_psnr
    );
    if s.failed() {
        return Err(Failure::Validation("validation PSNR is below the degraded-input baseline; run flagged failed".into()));
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), Failure> {
    let split = Split::parse(&a.split)?;
    let report = if a.baseline {
        let task = Task::parse(a.task.as_deref().unwrap_or_default())?;
        let data = a.data.as_deref().expect("clap enforces --data with --baseline");
        evaluate_baseline(data, task, split, a.slices_per_volume)?
    } else {
        let ck = a.checkpoint.as_deref().expect("clap enforces --checkpoint without --baseline");
        evaluate(ck, split, a.data.as_deref())?
    };
    report.write(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> Result<(), Failure> {
    let mut runs = Vec::new();
    for path in &a.runs {
        let r = MetricsReport::read(path)?;
        let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        runs.push((label, r));
    }
    let c = Comparison::new(runs)?;
    write(&a.out.join("comparison.csv"), &c.merged_csv())?;
    write(&a.out.join("comparison.svg"), &c.svg())?;
    let table = c.table();
    write(&a.out.join("comparison.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn selftest_cmd(a: SelftestArgs) -> Result<(), Failure> {
    let results = run_selftest(a.seed);
    let mut text = String::new();
    for r in &results {
        text.push_str(&format!("[{}] {}: {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail));
    }
    print!("{text}");
    if let Some(out) = &a.out {
        write(out, &text)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Validation(format!("{failed} of {} checks failed", results.len())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Selftest(a) => selftest_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
