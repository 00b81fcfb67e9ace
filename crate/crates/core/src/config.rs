//! Flat `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Lists are comma separated. Unknown keys, repeated keys and malformed
//! values are errors. Values resolve in the order defaults, then the file,
//! then command-line overrides.
//!
//! [`RunConfig::render`] writes every key with its current value, so
//! `RunConfig::default().render()` is the reference of all defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{SeriesFrame, SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{fmt_f64, SweepParam};
use crate::models::Mixing;
use crate::train::{Arm, Backbone, TrainConfig};

/// Value of `dataset` that selects the generator instead of a CSV file.
pub const SYNTHETIC: &str = "synthetic";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// CSV path, or `synthetic`.
    pub dataset: String,
    /// Label used in reports; defaults to the file stem.
    pub name: String,
    pub out: PathBuf,
    pub split: SplitSpec,
    pub lookback: usize,
    pub horizon: usize,
    /// Horizons of `ablate` and `sweep`.
    pub horizons: Vec<usize>,
    /// Seeds of `ablate`, `sweep` and `synth`.
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    pub jobs: usize,
    /// Channel names or indices; empty means every channel (or the
    /// generator's targets for synthetic data).
    pub targets: Vec<String>,
    pub train: TrainConfig,
    pub synth: SyntheticSpec,
    /// Test noise scales of `synth`.
    pub sigma_grid: Vec<f64>,
    pub sweep_param: SweepParam,
    pub sweep_values: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "data/ETTh1.csv".into(),
            name: String::new(),
            out: PathBuf::from("runs"),
            split: SplitSpec::default(),
            lookback: 336,
            horizon: 96,
            horizons: vec![96, 192, 336, 720],
            seeds: vec![0, 1, 2],
            arms: Arm::ALL[..3].to_vec(),
            jobs: 1,
            targets: Vec::new(),
            train: TrainConfig::default(),
            synth: SyntheticSpec {
                sigma_train: 1.0,
                sigma_test: 1.0,
                length: 20000,
                segment_length: 32,
                noise_channels: 4,
                noise_on_target: false,
                covariate_lead: 24,
                position_period: 48,
                ..SyntheticSpec::default()
            },
            sigma_grid: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            sweep_param: SweepParam::Beta,
            sweep_values: vec![0.0, 1.0, 1e2, 1e4],
        }
    }
}

/// Every key with a one-line description, in rendering order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "CSV file (first column may be a timestamp), or `synthetic`"),
    ("name", "dataset label in reports; empty uses the file stem"),
    ("out", "output directory"),
    ("split", "chronological train:val:test ratios"),
    ("lookback", "history length T"),
    ("horizon", "forecast length P for train and synth"),
    ("horizons", "forecast lengths for ablate and sweep"),
    ("seed", "seed of train"),
    ("seeds", "seeds of ablate, sweep and synth"),
    ("arms", "arms of ablate: original, tam, infotime, cdam"),
    ("jobs", "parallel fits for ablate, sweep and synth; 0 uses every core"),
    ("targets", "forecast channels by name or index; empty means all"),
    ("arm", "training objective of train and sweep"),
    ("backbone", "rmlp or mlp"),
    ("mixing", "mixing or independent (mlp backbone)"),
    ("epochs", "maximum epochs"),
    ("batch_size", "train batch size"),
    ("lr", "Adam learning rate"),
    ("q_lr", "Adam learning rate of the variational posterior"),
    ("patience", "epochs without validation improvement before stopping"),
    ("latent", "latent width d"),
    ("hidden", "hidden width"),
    ("instance_norm", "per-window normalization inside the model"),
    ("stride", "window stride on the train split"),
    ("train_windows", "train windows per epoch after shuffling; 0 uses all"),
    ("eval_windows", "evenly spaced cap on validation/test windows; 0 uses all"),
    ("eval_batch_size", "evaluation batch size"),
    ("timing", "record wall time per epoch (breaks byte-identical logs)"),
    ("beta", "weight of the vCLUB term"),
    ("recon_weight", "weight of the reconstruction term"),
    ("levels", "downsampling levels N"),
    ("lambda", "blend weight of the spliced forecasts"),
    ("synth.components", "sinusoid components per target"),
    ("synth.targets", "target series"),
    ("synth.length", "rows"),
    ("synth.sigma_train", "noise scale before the test boundary"),
    ("synth.sigma_test", "noise scale of the test rows (train, sweep)"),
    ("synth.segment_length", "steps between parameter knots"),
    ("synth.interpolate", "interpolate parameters between knots"),
    ("synth.noise_channels", "channels of pure noise"),
    ("synth.noise_on_target", "add noise to the targets too"),
    ("synth.covariates", "emit the parameter and position channels"),
    ("synth.covariate_lead", "steps the covariates lead the targets"),
    ("synth.position_period", "cycle of the position covariate; 0 is one sweep"),
    ("synth.seed", "generator seed of train and sweep"),
    ("synth.sigma_grid", "test noise scales of synth"),
    ("sweep.param", "beta or lambda"),
    ("sweep.values", "strictly increasing grid"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for key {key} (true or false)"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn parse_with<T>(value: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    f(value.trim())
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn join_f64(items: &[f64]) -> String {
    items.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(", ")
}

/// Splits `text` into `(line, key, value)` assignments.
pub fn parse_assignments(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Assigns one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "dataset" => self.dataset = value.trim().to_string(),
            "name" => self.name = value.trim().to_string(),
            "out" => self.out = PathBuf::from(value.trim()),
            "split" => self.split = parse_with(value, SplitSpec::from_str)?,
            "lookback" => self.lookback = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "horizons" => self.horizons = parse_list(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "arms" => self.arms = parse_list(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "targets" => self.targets = parse_list(key, value)?,
            "arm" => t.arm = parse_with(value, Arm::from_str)?,
            "backbone" => t.backbone = parse_with(value, Backbone::from_str)?,
            "mixing" => t.mixing = parse_with(value, Mixing::from_str)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "q_lr" => t.q_lr = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "latent" => t.latent = parse(key, value)?,
            "hidden" => t.hidden = parse(key, value)?,
            "instance_norm" => t.instance_norm = parse_bool(key, value)?,
            "stride" => t.stride = parse(key, value)?,
            "train_windows" => t.train_windows = parse(key, value)?,
            "eval_windows" => t.eval_windows = parse(key, value)?,
            "eval_batch_size" => t.eval_batch_size = parse(key, value)?,
            "timing" => t.timing = parse_bool(key, value)?,
            "beta" => t.ib.beta = parse(key, value)?,
            "recon_weight" => t.ib.recon_weight = parse(key, value)?,
            "levels" => t.tam.levels = parse(key, value)?,
            "lambda" => t.tam.lambda = parse(key, value)?,
            "synth.components" => s.components = parse(key, value)?,
            "synth.targets" => s.targets = parse(key, value)?,
            "synth.length" => s.length = parse(key, value)?,
            "synth.sigma_train" => s.sigma_train = parse(key, value)?,
            "synth.sigma_test" => s.sigma_test = parse(key, value)?,
            "synth.segment_length" => s.segment_length = parse(key, value)?,
            "synth.interpolate" => s.interpolate = parse_bool(key, value)?,
            "synth.noise_channels" => s.noise_channels = parse(key, value)?,
            "synth.noise_on_target" => s.noise_on_target = parse_bool(key, value)?,
            "synth.covariates" => s.covariates = parse_bool(key, value)?,
            "synth.covariate_lead" => s.covariate_lead = parse(key, value)?,
            "synth.position_period" => s.position_period = parse(key, value)?,
            "synth.seed" => s.seed = parse(key, value)?,
            "synth.sigma_grid" => self.sigma_grid = parse_list(key, value)?,
            "sweep.param" => self.sweep_param = parse_with(value, SweepParam::from_str)?,
            "sweep.values" => self.sweep_values = parse_list(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of `key` in the syntax [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let s = &self.synth;
        Some(match key {
            "dataset" => self.dataset.clone(),
            "name" => self.name.clone(),
            "out" => self.out.display().to_string(),
            "split" => self.split.to_string(),
            "lookback" => self.lookback.to_string(),
            "horizon" => self.horizon.to_string(),
            "horizons" => join(&self.horizons),
            "seed" => t.seed.to_string(),
            "seeds" => join(&self.seeds),
            "arms" => join(&self.arms),
            "jobs" => self.jobs.to_string(),
            "targets" => self.targets.join(", "),
            "arm" => t.arm.to_string(),
            "backbone" => t.backbone.to_string(),
            "mixing" => t.mixing.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => fmt_f64(t.lr),
            "q_lr" => fmt_f64(t.q_lr),
            "patience" => t.patience.to_string(),
            "latent" => t.latent.to_string(),
            "hidden" => t.hidden.to_string(),
            "instance_norm" => t.instance_norm.to_string(),
            "stride" => t.stride.to_string(),
            "train_windows" => t.train_windows.to_string(),
            "eval_windows" => t.eval_windows.to_string(),
            "eval_batch_size" => t.eval_batch_size.to_string(),
            "timing" => t.timing.to_string(),
            "beta" => fmt_f64(t.ib.beta),
            "recon_weight" => fmt_f64(t.ib.recon_weight),
            "levels" => t.tam.levels.to_string(),
            "lambda" => fmt_f64(t.tam.lambda),
            "synth.components" => s.components.to_string(),
            "synth.targets" => s.targets.to_string(),
            "synth.length" => s.length.to_string(),
            "synth.sigma_train" => fmt_f64(s.sigma_train),
            "synth.sigma_test" => fmt_f64(s.sigma_test),
            "synth.segment_length" => s.segment_length.to_string(),
            "synth.interpolate" => s.interpolate.to_string(),
            "synth.noise_channels" => s.noise_channels.to_string(),
            "synth.noise_on_target" => s.noise_on_target.to_string(),
            "synth.covariates" => s.covariates.to_string(),
            "synth.covariate_lead" => s.covariate_lead.to_string(),
            "synth.position_period" => s.position_period.to_string(),
            "synth.seed" => s.seed.to_string(),
            "synth.sigma_grid" => join_f64(&self.sigma_grid),
            "sweep.param" => self.sweep_param.to_string(),
            "sweep.values" => join_f64(&self.sweep_values),
            _ => return None,
        })
    }

    /// Applies the assignments of a config file; a key may appear once.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen: Vec<String> = Vec::new();
        for (line, key, value) in parse_assignments(text)? {
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {line}: key {key:?} assigned twice")));
            }
            self.set(&key, &value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {line}: {msg}")),
                other => other,
            })?;
            seen.push(key);
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }

    /// Every key with its value and description; parses back to `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            let value = self.get(key).expect("every listed key has a value");
            writeln!(out, "# {doc}").unwrap();
            writeln!(out, "{key} = {value}").unwrap();
        }
        out
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == SYNTHETIC
    }

    /// Report label: `name`, else the file stem of `dataset`.
    pub fn label(&self) -> String {
        if !self.name.is_empty() {
            return self.name.clone();
        }
        Path::new(&self.dataset).file_stem().map_or_else(|| self.dataset.clone(), |s| s.to_string_lossy().into_owned())
    }

    /// Target channel indices for `frame`.
    pub fn resolve_targets(&self, frame: &SeriesFrame) -> Result<Vec<usize>> {
        if self.targets.is_empty() {
            return Ok(if self.is_synthetic() { self.synth.target_indices() } else { Vec::new() });
        }
        self.targets
            .iter()
            .map(|t| {
                frame
                    .channel_index(t)
                    .or_else(|| t.parse::<usize>().ok().filter(|&i| i < frame.channels()))
                    .ok_or_else(|| Error::Config(format!("unknown target channel {t:?}")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        if self.lookback == 0 || self.horizon == 0 || self.horizons.contains(&0) {
            return Err(Error::Config("lookback and horizons must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_text(&d.render()).unwrap(), d);
        assert_eq!(KEYS.len(), d.render().lines().filter(|l| !l.starts_with('#')).count());
    }

    #[test]
    fn every_key_is_settable() {
        let d = RunConfig::default();
        for (key, _) in KEYS {
            let mut c = d.clone();
            c.set(key, &d.get(key).unwrap()).unwrap();
            assert_eq!(c, d, "{key}");
        }
    }

    #[test]
    fn parses_comments_and_lists() {
        let text = "# header\n\nlookback = 48  # trailing\nhorizons = 24, 48\narms = original, infotime\nbeta=100\nsynth.sigma_grid = 0,2\n";
        let c = RunConfig::from_text(text).unwrap();
        assert_eq!(c.lookback, 48);
        assert_eq!(c.horizons, vec![24, 48]);
        assert_eq!(c.arms, vec![Arm::Original, Arm::InfoTime]);
        assert_eq!(c.train.ib.beta, 100.0);
        assert_eq!(c.sigma_grid, vec![0.0, 2.0]);
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["bogus = 1", "lookback", "lookback = -1", "instance_norm = yes", "lookback = 1\nlookback = 2", "split = 6:2"] {
            assert!(matches!(RunConfig::from_text(text), Err(Error::Config(_))), "{text}");
        }
        let err = RunConfig::from_text("\nbogus = 1").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn labels_and_targets() {
        let mut c = RunConfig::default();
        assert_eq!(c.label(), "ETTh1");
        c.name = "x".into();
        assert_eq!(c.label(), "x");
        let frame = SeriesFrame::new(vec![0.0; 6], vec!["a".into(), "OT".into(), "c".into()], None).unwrap();
        c.targets = vec!["OT".into(), "2".into()];
        assert_eq!(c.resolve_targets(&frame).unwrap(), vec![1, 2]);
        c.targets = vec!["nope".into()];
        assert!(c.resolve_targets(&frame).is_err());
        c.targets.clear();
        assert!(c.resolve_targets(&frame).unwrap().is_empty());
        c.dataset = SYNTHETIC.into();
        assert_eq!(c.resolve_targets(&frame).unwrap(), vec![0]);
    }

    proptest! {
        #[test]
        fn numeric_values_round_trip(lr in 1e-8f64..1.0, beta in 0.0f64..1e6, epochs in 1usize..1000, seeds in proptest::collection::vec(0u64..1000, 1..5)) {
            let mut c = RunConfig::default();
            c.train.lr = lr;
            c.train.ib.beta = beta;
            c.train.epochs = epochs;
            c.seeds = seeds;
            prop_assert_eq!(RunConfig::from_text(&c.render()).unwrap(), c);
        }
    }
}
