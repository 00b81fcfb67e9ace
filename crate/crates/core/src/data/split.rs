use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Train:val:test ratios, e.g. `6:2:2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub ratios: [u32; 3],
}

impl SplitSpec {
    pub fn new(train: u32, val: u32, test: u32) -> Result<Self> {
        if train + val + test == 0 {
            return Err(Error::Config("split ratios must not all be zero".into()));
        }
        Ok(Self { ratios: [train, val, test] })
    }

    fn total(&self) -> u64 {
        self.ratios.iter().map(|&r| r as u64).sum()
    }

    /// Row index where the test targets begin for a series of `len` rows.
    pub fn test_start(&self, len: usize) -> usize {
        (len as u64 * (self.ratios[0] + self.ratios[1]) as u64 / self.total()) as usize
    }

    pub fn val_start(&self, len: usize) -> usize {
        (len as u64 * self.ratios[0] as u64 / self.total()) as usize
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { ratios: [6, 2, 2] }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.ratios[0], self.ratios[1], self.ratios[2])
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || Error::Config(format!("split must look like 6:2:2, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let r: Vec<u32> = parts.iter().map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        Self::new(r[0], r[1], r[2])
    }
}

/// Target-row ranges of the three chronological segments.
///
/// Windows for `val` and `test` may read `lookback` rows before their
/// segment start; targets never cross a boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub lookback: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Train,
    Val,
    Test,
}

impl Splits {
    pub fn targets(&self, seg: Segment) -> Range<usize> {
        match seg {
            Segment::Train => self.train.clone(),
            Segment::Val => self.val.clone(),
            Segment::Test => self.test.clone(),
        }
    }

    /// Rows a window generator may read for `seg`.
    pub fn window_range(&self, seg: Segment) -> Range<usize> {
        match seg {
            Segment::Train => self.train.clone(),
            Segment::Val | Segment::Test => {
                let r = self.targets(seg);
                if r.is_empty() {
                    r
                } else {
                    r.start.saturating_sub(self.lookback)..r.end
                }
            }
        }
    }
}

/// Splits `len` rows at `floor(len·r_train/Σ)` and `floor(len·(r_train+r_val)/Σ)`.
pub fn split_chronological(len: usize, spec: SplitSpec, lookback: usize, horizon: usize) -> Result<Splits> {
    let a = spec.val_start(len);
    let b = spec.test_start(len);
    let splits = Splits { train: 0..a, val: a..b, test: b..len, lookback };
    let need = lookback + horizon;
    if splits.train.len() < need {
        return Err(Error::Config(format!(
            "train segment has {} rows, needs at least lookback + horizon = {need}",
            splits.train.len()
        )));
    }
    for (name, seg, ratio) in [("val", Segment::Val, spec.ratios[1]), ("test", Segment::Test, spec.ratios[2])] {
        if ratio > 0 && splits.window_range(seg).len() < need {
            return Err(Error::Config(format!(
                "{name} segment has {} target rows, needs at least horizon = {horizon}",
                splits.targets(seg).len()
            )));
        }
    }
    Ok(splits)
}
