use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::report::{aligned_table, csv_table, fmt_f64, mean_metrics, MetricReport};
use super::Metrics;
use crate::data::{Dataset, SeriesFrame, SplitSpec};
use crate::error::{Error, Result};
use crate::train::{fit, Arm, FitResult, TrainConfig};

/// Maps `f` over `items` on a pool of `jobs` workers (0 means one per core),
/// keeping input order.
pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

/// Fits and, given a directory, writes the run log and checkpoint there.
pub(crate) fn fit_saved(cfg: &TrainConfig, data: &Dataset, dir: Option<&Path>) -> Result<FitResult> {
    let r = fit(cfg, data)?;
    if let Some(dir) = dir {
        r.log.write(&dir.join("runlog.csv"))?;
        r.model.save(&dir.join("model.ckpt"))?;
    }
    Ok(r)
}

/// Test metrics of one fit.
pub(crate) fn fit_test_metrics(cfg: &TrainConfig, data: &Dataset, dir: Option<&Path>) -> Result<Metrics> {
    fit_saved(cfg, data, dir)?.test.ok_or_else(|| Error::Config("the test split has no complete window".into()))
}

#[derive(Debug, Clone)]
pub struct AblationSpec {
    pub dataset: String,
    pub lookback: usize,
    pub split: SplitSpec,
    pub horizons: Vec<usize>,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    /// Everything but arm and seed.
    pub base: TrainConfig,
    pub jobs: usize,
    /// Run logs and checkpoints go to `<save_dir>/<arm>-h<horizon>-s<seed>/`.
    pub save_dir: Option<PathBuf>,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.arms.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one horizon, arm and seed".into()));
        }
        self.base.validate()
    }
}

/// One cell of the cross product and what became of it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub arm: Arm,
    pub horizon: usize,
    pub seed: u64,
    pub outcome: std::result::Result<Metrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub dataset: String,
    pub horizons: Vec<usize>,
    pub arms: Vec<Arm>,
    /// Horizon-major, then arm, then seed.
    pub runs: Vec<RunRecord>,
}

/// Seed mean of a cell, or the reason it has none.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Mean(Metrics),
    Failed(usize),
}

impl AblationReport {
    pub fn reports(&self) -> Vec<MetricReport> {
        self.runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|&m| MetricReport::new(&self.dataset, r.arm, r.horizon, r.seed, m)))
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Any failed seed marks the whole cell.
    pub fn cell(&self, arm: Arm, horizon: usize) -> Option<Cell> {
        let runs: Vec<&RunRecord> = self.runs.iter().filter(|r| r.arm == arm && r.horizon == horizon).collect();
        if runs.is_empty() {
            return None;
        }
        let failed = runs.iter().filter(|r| r.outcome.is_err()).count();
        if failed > 0 {
            return Some(Cell::Failed(failed));
        }
        mean_metrics(runs.iter().filter_map(|r| r.outcome.as_ref().ok())).map(Cell::Mean)
    }

    pub fn mean(&self, arm: Arm, horizon: usize) -> Option<Metrics> {
        match self.cell(arm, horizon)? {
            Cell::Mean(m) => Some(m),
            Cell::Failed(_) => None,
        }
    }

    /// Per-run rows; failed runs keep their row with empty metrics.
    pub fn runs_csv(&self) -> String {
        let mut rows = vec![["dataset", "arm", "horizon", "seed", "mse", "mae", "status"].map(String::from).to_vec()];
        for r in &self.runs {
            let (mse, mae, status) = match &r.outcome {
                Ok(m) => (fmt_f64(m.mse), fmt_f64(m.mae), "ok".to_string()),
                Err(e) => (String::new(), String::new(), format!("failed: {}", e.replace([',', '\n'], ";"))),
            };
            rows.push(vec![self.dataset.clone(), r.arm.to_string(), r.horizon.to_string(), r.seed.to_string(), mse, mae, status]);
        }
        csv_table(&rows)
    }

    fn cell_rows(&self) -> Vec<Vec<String>> {
        let mut header = vec!["horizon".to_string()];
        for arm in &self.arms {
            header.push(format!("{arm} mse"));
            header.push(format!("{arm} mae"));
        }
        let mut rows = vec![header];
        for &h in &self.horizons {
            let mut row = vec![h.to_string()];
            for &arm in &self.arms {
                match self.cell(arm, h) {
                    Some(Cell::Mean(m)) => {
                        row.push(format!("{:.4}", m.mse));
                        row.push(format!("{:.4}", m.mae));
                    }
                    _ => {
                        row.push("FAILED".into());
                        row.push("FAILED".into());
                    }
                }
            }
            rows.push(row);
        }
        rows
    }

    /// Seed means laid out with one row per horizon and an MSE/MAE column
    /// pair per arm.
    pub fn cells_csv(&self) -> String {
        csv_table(&self.cell_rows())
    }

    pub fn table(&self) -> String {
        aligned_table(&self.cell_rows())
    }
}

/// Fits every (horizon, arm, seed) combination and collects test metrics.
/// Individual failures are recorded rather than returned.
pub fn run_ablation(frame: &SeriesFrame, spec: &AblationSpec) -> Result<AblationReport> {
    spec.validate()?;
    let datasets = spec
        .horizons
        .iter()
        .map(|&h| Dataset::prepare(frame, spec.split, spec.lookback, h))
        .collect::<Result<Vec<_>>>()?;
    let mut tasks = Vec::new();
    for (d, &horizon) in spec.horizons.iter().enumerate() {
        for &arm in &spec.arms {
            for &seed in &spec.seeds {
                tasks.push((d, horizon, arm, seed));
            }
        }
    }
    let runs = parallel_map(&tasks, spec.jobs, |&(d, horizon, arm, seed)| {
        let cfg = TrainConfig { arm, seed, ..spec.base.clone() };
        let dir = spec.save_dir.as_ref().map(|p| p.join(format!("{}-h{horizon}-s{seed}", arm.as_str())));
        let outcome = fit_test_metrics(&cfg, &datasets[d], dir.as_deref()).map_err(|e| e.to_string());
        RunRecord { arm, horizon, seed, outcome }
    });
    Ok(AblationReport { dataset: spec.dataset.clone(), horizons: spec.horizons.clone(), arms: spec.arms.clone(), runs })
}
