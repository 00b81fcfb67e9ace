use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::ablation::{fit_test_metrics, parallel_map};
use super::report::{aligned_table, csv_table, fmt_f64, mean_metrics, MetricReport};
use super::Metrics;
use crate::data::{Dataset, SeriesFrame, SplitSpec};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Weight of the vCLUB term.
    Beta,
    /// Blend weight of the spliced forecasts.
    Lambda,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Lambda => "lambda",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig, value: f64) {
        match self {
            SweepParam::Beta => cfg.ib.beta = value,
            SweepParam::Lambda => cfg.tam.lambda = value,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "beta" | "β" => Ok(SweepParam::Beta),
            "lambda" | "λ" => Ok(SweepParam::Lambda),
            _ => Err(Error::Config(format!("unknown sweep parameter {s:?} (beta, lambda)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweepParam,
    /// Strictly increasing.
    pub values: Vec<f64>,
    pub base: TrainConfig,
    pub dataset: String,
    pub lookback: usize,
    pub split: SplitSpec,
    pub horizons: Vec<usize>,
    /// Every grid value is fitted with each of these seeds.
    pub seeds: Vec<u64>,
    pub jobs: usize,
    /// Run logs and checkpoints go to `<save_dir>/<param>-<value>-h<horizon>-s<seed>/`.
    pub save_dir: Option<PathBuf>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) || self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("sweep grid must be finite and strictly increasing: {:?}", self.values)));
        }
        if self.horizons.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one horizon and seed".into()));
        }
        for &v in &self.values {
            let mut cfg = self.base.clone();
            self.param.apply(&mut cfg, v);
            cfg.validate()?;
            if self.param == SweepParam::Lambda {
                cfg.tam.validate(self.horizons[0])?;
            }
        }
        self.base.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Seed-mean metrics at `value` for `horizon`.
    pub fn mean(&self, value: f64, horizon: usize) -> Option<Metrics> {
        let ms: Vec<Metrics> = self
            .points
            .iter()
            .filter(|p| p.value == value && p.report.horizon == horizon)
            .map(|p| p.report.metrics())
            .collect();
        mean_metrics(&ms)
    }

    fn keys(&self) -> Vec<(usize, f64)> {
        let mut keys: Vec<(usize, f64)> = Vec::new();
        for p in &self.points {
            let k = (p.report.horizon, p.value);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys
    }

    /// `(value, mse)` pairs per horizon, seed-averaged; one row each.
    pub fn to_csv(&self) -> String {
        csv_table(&self.rows(|v| fmt_f64(v)))
    }

    /// Every run, one row per (value, horizon, seed).
    pub fn runs_csv(&self) -> String {
        let mut rows = vec![vec![self.param.to_string(), "horizon".into(), "seed".into(), "mse".into(), "mae".into()]];
        for p in &self.points {
            let r = &p.report;
            rows.push(vec![fmt_f64(p.value), r.horizon.to_string(), r.seed.to_string(), fmt_f64(r.mse), fmt_f64(r.mae)]);
        }
        csv_table(&rows)
    }

    pub fn table(&self) -> String {
        aligned_table(&self.rows(|v| format!("{v:.4}")))
    }

    fn rows(&self, num: impl Fn(f64) -> String) -> Vec<Vec<String>> {
        let mut rows = vec![vec![self.param.to_string(), "horizon".into(), "mse".into(), "mae".into()]];
        for (h, v) in self.keys() {
            let m = self.mean(v, h).expect("key comes from a point");
            rows.push(vec![fmt_f64(v), h.to_string(), num(m.mse), num(m.mae)]);
        }
        rows
    }
}

/// Fits one model per (horizon, grid value, seed). The first failure aborts
/// the sweep.
pub fn run_sweep(frame: &SeriesFrame, spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let datasets = spec
        .horizons
        .iter()
        .map(|&h| Dataset::prepare(frame, spec.split, spec.lookback, h))
        .collect::<Result<Vec<_>>>()?;
    let mut tasks = Vec::new();
    for d in 0..spec.horizons.len() {
        for &value in &spec.values {
            for &seed in &spec.seeds {
                tasks.push((d, value, seed));
            }
        }
    }
    let results = parallel_map(&tasks, spec.jobs, |&(d, value, seed)| {
        let mut cfg = TrainConfig { seed, ..spec.base.clone() };
        spec.param.apply(&mut cfg, value);
        let dir = spec.save_dir.as_ref().map(|p| p.join(format!("{}-{}-h{}-s{seed}", spec.param, fmt_f64(value), spec.horizons[d])));
        fit_test_metrics(&cfg, &datasets[d], dir.as_deref()).map(|m| SweepPoint {
            value,
            report: MetricReport::new(&spec.dataset, cfg.arm, spec.horizons[d], seed, m),
        })
    });
    let points = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { param: spec.param, points })
}
