use std::fmt::Write as _;

use super::Metrics;
use crate::train::Arm;

/// One run's test metrics on the standardized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub dataset: String,
    pub arm: Arm,
    pub horizon: usize,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
}

impl MetricReport {
    pub fn new(dataset: &str, arm: Arm, horizon: usize, seed: u64, m: Metrics) -> Self {
        Self { dataset: dataset.to_string(), arm, horizon, seed, mse: m.mse, mae: m.mae }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics { mse: self.mse, mae: self.mae }
    }

    /// Non-negative and finite.
    pub fn is_valid(&self) -> bool {
        self.mse.is_finite() && self.mae.is_finite() && self.mse >= 0.0 && self.mae >= 0.0
    }
}

/// Plain float formatting shared by every CSV writer (`.` decimal point,
/// shortest round-trip representation).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Mean of the metrics, `None` when empty.
pub fn mean_metrics<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> Option<Metrics> {
    let mut n = 0usize;
    let (mut sq, mut abs) = (0.0, 0.0);
    for m in items {
        sq += m.mse;
        abs += m.mae;
        n += 1;
    }
    (n > 0).then(|| Metrics { mse: sq / n as f64, mae: abs / n as f64 })
}

/// Renders rows as columns padded to a common width. The first row is the
/// header and is followed by a rule; numeric-looking cells are right aligned.
pub fn aligned_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut width = vec![0; cols];
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for (r, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&width)
            .map(|(cell, &w)| {
                if r > 0 && cell.parse::<f64>().is_ok() {
                    format!("{cell:>w$}")
                } else {
                    format!("{cell:<w$}")
                }
            })
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
        if r == 0 {
            let total = width.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
            writeln!(out, "{}", "-".repeat(total)).unwrap();
        }
    }
    out
}

/// Comma separated rows with a trailing newline.
pub fn csv_table(rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
