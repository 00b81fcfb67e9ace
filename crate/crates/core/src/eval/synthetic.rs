use std::fmt;
use std::path::PathBuf;

use super::ablation::{fit_saved, parallel_map};
use super::report::{aligned_table, csv_table, fmt_f64};
use super::Metrics;
use crate::data::{generate_synthetic, Dataset, Segment, SyntheticSpec};
use crate::error::{Error, Result};
use crate::models::Mixing;
use crate::train::{evaluate_windows, Arm, Backbone, TrainConfig};

/// Model wirings compared on synthetic data. All three use the MLP backbone
/// and differ only in channel mixing and the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticArm {
    Mixing,
    Independent,
    Cdam,
}

impl SyntheticArm {
    pub const ALL: [SyntheticArm; 3] = [SyntheticArm::Mixing, SyntheticArm::Independent, SyntheticArm::Cdam];

    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticArm::Mixing => "channel-mixing",
            SyntheticArm::Independent => "channel-independence",
            SyntheticArm::Cdam => "cdam",
        }
    }

    pub fn config(self, base: &TrainConfig) -> TrainConfig {
        let (mixing, arm) = match self {
            SyntheticArm::Mixing => (Mixing::Channel, Arm::Original),
            SyntheticArm::Independent => (Mixing::Independent, Arm::Original),
            SyntheticArm::Cdam => (Mixing::Channel, Arm::Cdam),
        };
        TrainConfig { backbone: Backbone::Mlp, mixing, arm, ..base.clone() }
    }
}

impl fmt::Display for SyntheticArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticExperiment {
    /// Generator settings; noise scales and seed are set per run.
    pub spec: SyntheticSpec,
    pub sigma_train: f64,
    /// Test noise scales; the matched scale is always added.
    pub sigma_test: Vec<f64>,
    pub lookback: usize,
    pub horizon: usize,
    /// Shared training settings; targets are taken from the generator.
    pub base: TrainConfig,
    /// Each seed drives both the generator and training.
    pub seeds: Vec<u64>,
    pub jobs: usize,
    /// Run logs and checkpoints go to `<save_dir>/<arm>-s<seed>/`.
    pub save_dir: Option<PathBuf>,
}

impl SyntheticExperiment {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("synthetic experiment needs at least one seed".into()));
        }
        if !(self.sigma_train >= 0.0) || self.sigma_test.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("noise scales must be finite and non-negative".into()));
        }
        self.base.validate()
    }

    /// Sorted test grid including `sigma_train`.
    pub fn grid(&self) -> Vec<f64> {
        let mut g = self.sigma_test.clone();
        g.push(self.sigma_train);
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }

    fn data_spec(&self, seed: u64, sigma_test: f64) -> SyntheticSpec {
        SyntheticSpec { sigma_train: self.sigma_train, sigma_test, seed, ..self.spec.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRun {
    pub arm: SyntheticArm,
    pub seed: u64,
    pub sigma_test: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticReport {
    pub sigma_train: f64,
    pub grid: Vec<f64>,
    pub runs: Vec<SyntheticRun>,
}

impl SyntheticReport {
    fn run(&self, arm: SyntheticArm, seed: u64, sigma: f64) -> Option<&SyntheticRun> {
        self.runs.iter().find(|r| r.arm == arm && r.seed == seed && r.sigma_test == sigma)
    }

    fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Seed-mean test MSE.
    pub fn mse(&self, arm: SyntheticArm, sigma: f64) -> Option<f64> {
        let v: Vec<f64> = self.seeds().iter().filter_map(|&s| self.run(arm, s, sigma)).map(|r| r.metrics.mse).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Seed mean of `MSE(σ) / MSE(σ_train)`; exactly 1 at the matched scale.
    pub fn degradation(&self, arm: SyntheticArm, sigma: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .seeds()
            .iter()
            .filter_map(|&s| {
                let at = self.run(arm, s, sigma)?.metrics.mse;
                let matched = self.run(arm, s, self.sigma_train)?.metrics.mse;
                Some(at / matched)
            })
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `(arm, sigma_test, mse, ratio)` rows, usable directly as plot data.
    pub fn to_csv(&self) -> String {
        csv_table(&self.rows(fmt_f64))
    }

    pub fn runs_csv(&self) -> String {
        let mut rows = vec![["arm", "seed", "sigma_test", "mse", "mae"].map(String::from).to_vec()];
        for r in &self.runs {
            rows.push(vec![
                r.arm.to_string(),
                r.seed.to_string(),
                fmt_f64(r.sigma_test),
                fmt_f64(r.metrics.mse),
                fmt_f64(r.metrics.mae),
            ]);
        }
        csv_table(&rows)
    }

    pub fn table(&self) -> String {
        aligned_table(&self.rows(|v| format!("{v:.4}")))
    }

    fn rows(&self, num: impl Fn(f64) -> String) -> Vec<Vec<String>> {
        let mut rows = vec![["arm", "sigma_test", "mse", "ratio"].map(String::from).to_vec()];
        for arm in SyntheticArm::ALL {
            for &s in &self.grid {
                if let (Some(m), Some(r)) = (self.mse(arm, s), self.degradation(arm, s)) {
                    rows.push(vec![arm.to_string(), fmt_f64(s), num(m), num(r)]);
                }
            }
        }
        rows
    }
}

/// Trains each arm on data with noise scale `sigma_train` and evaluates it on
/// test segments regenerated with every scale of the grid. Train and
/// validation rows, and hence the standardization, are identical across the
/// grid, so only the test noise changes.
pub fn run_synthetic_experiment(exp: &SyntheticExperiment) -> Result<SyntheticReport> {
    exp.validate()?;
    let grid = exp.grid();
    let targets = exp.spec.target_indices();
    let mut tasks = Vec::new();
    for &seed in &exp.seeds {
        for arm in SyntheticArm::ALL {
            tasks.push((seed, arm));
        }
    }
    let results = parallel_map(&tasks, exp.jobs, |&(seed, arm)| -> Result<Vec<SyntheticRun>> {
        let frame = generate_synthetic(&exp.data_spec(seed, exp.sigma_train))?;
        let data = Dataset::prepare(&frame, exp.spec.split, exp.lookback, exp.horizon)?;
        let cfg = TrainConfig { seed, targets: targets.clone(), ..arm.config(&exp.base) };
        let dir = exp.save_dir.as_ref().map(|p| p.join(format!("{arm}-s{seed}")));
        let model = fit_saved(&cfg, &data, dir.as_deref())?.model;
        let mut runs = Vec::with_capacity(grid.len());
        for &sigma in &grid {
            let shifted = generate_synthetic(&exp.data_spec(seed, sigma))?;
            let test = Dataset::with_stats(&shifted, data.stats.clone(), exp.spec.split, exp.lookback, exp.horizon)?;
            let windows = test.windows(Segment::Test, 1)?.thinned(cfg.eval_windows);
            if windows.is_empty() {
                return Err(Error::Config("the synthetic test split has no complete window".into()));
            }
            let metrics = evaluate_windows(&model, &cfg.tam, &test, &windows, cfg.eval_batch_size)?;
            runs.push(SyntheticRun { arm, seed, sigma_test: sigma, metrics });
        }
        Ok(runs)
    });
    let mut runs = Vec::new();
    for r in results {
        runs.extend(r?);
    }
    Ok(SyntheticReport { sigma_train: exp.sigma_train, grid, runs })
}
