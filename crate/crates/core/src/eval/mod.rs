//! Metrics, ablation tables, hyper-parameter sweeps and the synthetic
//! noise-robustness experiment.

mod ablation;
mod metrics;
mod report;
mod sweep;
mod synthetic;

pub use ablation::{run_ablation, AblationReport, AblationSpec, Cell, RunRecord};
pub use metrics::{mae, mse, ErrorAccumulator, Metrics};
pub use report::{aligned_table, csv_table, fmt_f64, mean_metrics, MetricReport};
pub use sweep::{run_sweep, SweepParam, SweepPoint, SweepReport, SweepSpec};
pub use synthetic::{run_synthetic_experiment, SyntheticArm, SyntheticExperiment, SyntheticReport, SyntheticRun};

#[cfg(test)]
mod tests;
