//! Series ingestion, chronological splits, normalisation, windowing, and the
//! synthetic sinusoid generator.

mod frame;
mod norm;
mod split;
mod synthetic;
mod windows;

pub use frame::{load_csv, read_csv, SeriesFrame};
pub use norm::{
    fit_standardizer, instance_denormalize, instance_normalize, InstanceStats, NormStats, INSTANCE_STD_FLOOR,
    STD_FLOOR,
};
pub use split::{split_chronological, Segment, SplitSpec, Splits};
pub use synthetic::{generate_synthetic, sinusoid_sum, SyntheticSpec};
pub use windows::{make_windows, WindowBatch, Windows};

use crate::error::Result;

/// A standardised frame with its split and the statistics used to scale it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub frame: SeriesFrame,
    pub stats: NormStats,
    pub splits: Splits,
    pub horizon: usize,
}

impl Dataset {
    /// Splits `raw`, fits z-scoring on the train rows and applies it to all rows.
    pub fn prepare(raw: &SeriesFrame, split: SplitSpec, lookback: usize, horizon: usize) -> Result<Self> {
        let splits = split_chronological(raw.len(), split, lookback, horizon)?;
        let stats = fit_standardizer(raw, splits.train.clone())?;
        Ok(Self { frame: stats.apply(raw), stats, splits, horizon })
    }

    /// Like [`Dataset::prepare`] but scales with existing statistics.
    pub fn with_stats(raw: &SeriesFrame, stats: NormStats, split: SplitSpec, lookback: usize, horizon: usize) -> Result<Self> {
        let splits = split_chronological(raw.len(), split, lookback, horizon)?;
        Ok(Self { frame: stats.apply(raw), stats, splits, horizon })
    }

    pub fn windows(&self, seg: Segment, stride: usize) -> Result<Windows> {
        make_windows(self.splits.window_range(seg), self.splits.lookback, self.horizon, stride)
    }

    pub fn lookback(&self) -> usize {
        self.splits.lookback
    }
}
