//! Command-line front end: `train`, `eval <checkpoint>`, `synth`, `ablate`
//! and `sweep`.
//!
//! Settings resolve as defaults, then `--config FILE`, then each
//! `--set key=value` in order, then the dedicated flags `--seed`, `--out` and
//! `--jobs`. `--seed N` sets both `seed` and `seeds`.
//!
//! Exit codes: 0 success, 1 a run failed, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_csv, Dataset, Segment, SeriesFrame};
use crate::error::{Error, Result};
use crate::eval::{
    csv_table, fmt_f64, run_ablation, run_sweep, run_synthetic_experiment, AblationSpec, MetricReport, SweepSpec,
    SyntheticExperiment,
};
use crate::io::write_atomic;
use crate::models::Model;
use crate::train::{evaluate_windows, fit, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "infotime", version, about = "Train and evaluate MLP forecasters with cross-variable and temporal auxiliary losses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed of single runs and the only seed of multi-seed runs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallel fits for ablate, sweep and synth.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and write its run log, checkpoint and test report.
    Train,
    /// Score a checkpoint on the test split.
    Eval {
        checkpoint: PathBuf,
    },
    /// Noise-robustness experiment on generated data.
    Synth,
    /// Cross product of arms, horizons and seeds.
    Ablate,
    /// Grid over `beta` or `lambda`.
    Sweep,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

/// Resolved configuration plus the config file text, if any.
pub fn resolve(cli: &Cli) -> Result<(RunConfig, Option<String>)> {
    let mut cfg = RunConfig::default();
    let source = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
            Some(text)
        }
        None => None,
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok((cfg, source))
}

/// Parses `args` (including the program name) and runs the command.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    let (cfg, source) = resolve(cli)?;
    match &cli.command {
        Command::Train => train(&cfg, source.as_deref()),
        Command::Eval { checkpoint } => eval(cli, checkpoint),
        Command::Synth => synth(&cfg, source.as_deref()),
        Command::Ablate => ablate(&cfg, source.as_deref()),
        Command::Sweep => sweep(&cfg, source.as_deref()),
    }
}

/// The resolved config, and the file it came from, verbatim.
fn write_config(cfg: &RunConfig, source: Option<&str>) -> Result<()> {
    write_atomic(&cfg.out.join("config.txt"), cfg.render().as_bytes())?;
    if let Some(text) = source {
        write_atomic(&cfg.out.join("config.source.txt"), text.as_bytes())?;
    }
    Ok(())
}

fn load_frame(cfg: &RunConfig) -> Result<SeriesFrame> {
    if cfg.is_synthetic() {
        return generate_synthetic(&cfg.synth);
    }
    let path = Path::new(&cfg.dataset);
    if !path.exists() {
        return Err(Error::Config(format!("dataset {} not found", path.display())));
    }
    load_csv(path)
}

fn train_config(cfg: &RunConfig, frame: &SeriesFrame) -> Result<TrainConfig> {
    Ok(TrainConfig { targets: cfg.resolve_targets(frame)?, ..cfg.train.clone() })
}

fn report_csv(reports: &[MetricReport]) -> String {
    let mut rows = vec![["dataset", "arm", "horizon", "seed", "mse", "mae"].map(String::from).to_vec()];
    for r in reports {
        rows.push(vec![r.dataset.clone(), r.arm.to_string(), r.horizon.to_string(), r.seed.to_string(), fmt_f64(r.mse), fmt_f64(r.mae)]);
    }
    csv_table(&rows)
}

fn train(cfg: &RunConfig, source: Option<&str>) -> std::result::Result<(), Failure> {
    let frame = load_frame(cfg)?;
    let data = Dataset::prepare(&frame, cfg.split, cfg.lookback, cfg.horizon)?;
    let tcfg = train_config(cfg, &frame)?;
    write_config(cfg, source)?;
    let r = fit(&tcfg, &data)?;
    r.log.write(&cfg.out.join("runlog.csv"))?;
    r.model.save(&cfg.out.join("model.ckpt"))?;
    let test = r.test.ok_or_else(|| Failure::Run("the test split has no complete window".into()))?;
    let report = MetricReport::new(&cfg.label(), tcfg.arm, cfg.horizon, tcfg.seed, test);
    write_atomic(&cfg.out.join("report.csv"), report_csv(&[report]).as_bytes())?;
    println!("best epoch {}: val mse {:.4}, test mse {:.4}, test mae {:.4}", r.best_epoch(), r.val.mse, test.mse, test.mae);
    Ok(())
}

/// Uses the checkpoint directory's `config.txt` when no config is given and
/// writes to `<checkpoint dir>/eval` unless `--out` is set.
fn eval(cli: &Cli, checkpoint: &Path) -> std::result::Result<(), Failure> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let beside = dir.join("config.txt");
    let cli_cfg = Cli {
        command: Command::Train,
        config: cli.config.clone().or_else(|| beside.exists().then_some(beside)),
        seed: cli.seed,
        out: cli.out.clone().or_else(|| Some(dir.join("eval"))),
        jobs: cli.jobs,
        set: cli.set.clone(),
    };
    let (cfg, source) = resolve(&cli_cfg)?;
    if !checkpoint.exists() {
        return Err(Failure::Usage(format!("checkpoint {} not found", checkpoint.display())));
    }
    let frame = load_frame(&cfg)?;
    let data = Dataset::prepare(&frame, cfg.split, cfg.lookback, cfg.horizon)?;
    let tcfg = train_config(&cfg, &frame)?;
    let mut model = Model::new(tcfg.model_config(cfg.lookback, cfg.horizon, frame.channels()), 0)?;
    model.load_weights(checkpoint)?;
    let windows = data.windows(Segment::Test, 1)?.thinned(tcfg.eval_windows);
    if windows.is_empty() {
        return Err(Failure::Run("the test split has no complete window".into()));
    }
    let m = evaluate_windows(&model, &tcfg.tam, &data, &windows, tcfg.eval_batch_size)?;
    write_config(&cfg, source.as_deref())?;
    let report = MetricReport::new(&cfg.label(), tcfg.arm, cfg.horizon, tcfg.seed, m);
    write_atomic(&cfg.out.join("report.csv"), report_csv(&[report]).as_bytes())?;
    println!("test mse {:.4}, test mae {:.4}", m.mse, m.mae);
    Ok(())
}

fn synth(cfg: &RunConfig, source: Option<&str>) -> std::result::Result<(), Failure> {
    let exp = SyntheticExperiment {
        spec: cfg.synth.clone(),
        sigma_train: cfg.synth.sigma_train,
        sigma_test: cfg.sigma_grid.clone(),
        lookback: cfg.lookback,
        horizon: cfg.horizon,
        base: cfg.train.clone(),
        seeds: cfg.seeds.clone(),
        jobs: cfg.jobs,
        save_dir: Some(cfg.out.join("runs")),
    };
    exp.validate()?;
    write_config(cfg, source)?;
    let r = run_synthetic_experiment(&exp)?;
    write_atomic(&cfg.out.join("report.csv"), r.to_csv().as_bytes())?;
    write_atomic(&cfg.out.join("runs.csv"), r.runs_csv().as_bytes())?;
    write_atomic(&cfg.out.join("table.txt"), r.table().as_bytes())?;
    print!("{}", r.table());
    Ok(())
}

fn ablate(cfg: &RunConfig, source: Option<&str>) -> std::result::Result<(), Failure> {
    let frame = load_frame(cfg)?;
    let spec = AblationSpec {
        dataset: cfg.label(),
        lookback: cfg.lookback,
        split: cfg.split,
        horizons: cfg.horizons.clone(),
        arms: cfg.arms.clone(),
        seeds: cfg.seeds.clone(),
        base: train_config(cfg, &frame)?,
        jobs: cfg.jobs,
        save_dir: Some(cfg.out.join("runs")),
    };
    spec.validate()?;
    write_config(cfg, source)?;
    let r = run_ablation(&frame, &spec)?;
    write_atomic(&cfg.out.join("report.csv"), r.runs_csv().as_bytes())?;
    write_atomic(&cfg.out.join("cells.csv"), r.cells_csv().as_bytes())?;
    write_atomic(&cfg.out.join("table.txt"), r.table().as_bytes())?;
    print!("{}", r.table());
    match r.failures() {
        0 => Ok(()),
        n => Err(Failure::Run(format!("{n} of {} runs failed; see report.csv", r.runs.len()))),
    }
}

fn sweep(cfg: &RunConfig, source: Option<&str>) -> std::result::Result<(), Failure> {
    let frame = load_frame(cfg)?;
    let spec = SweepSpec {
        param: cfg.sweep_param,
        values: cfg.sweep_values.clone(),
        base: train_config(cfg, &frame)?,
        dataset: cfg.label(),
        lookback: cfg.lookback,
        split: cfg.split,
        horizons: cfg.horizons.clone(),
        seeds: cfg.seeds.clone(),
        jobs: cfg.jobs,
        save_dir: Some(cfg.out.join("runs")),
    };
    spec.validate()?;
    write_config(cfg, source)?;
    let r = run_sweep(&frame, &spec)?;
    write_atomic(&cfg.out.join("report.csv"), r.to_csv().as_bytes())?;
    write_atomic(&cfg.out.join("runs.csv"), r.runs_csv().as_bytes())?;
    write_atomic(&cfg.out.join("table.txt"), r.table().as_bytes())?;
    print!("{}", r.table());
    Ok(())
}
