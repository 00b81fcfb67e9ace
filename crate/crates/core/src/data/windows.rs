use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::norm::{instance_normalize, InstanceStats};
use super::SeriesFrame;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// History/target pairs: `x: [B, T, C]`, `y: [B, P, C]`.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub x: Tensor,
    pub y: Tensor,
    /// Present when `x` has been instance-normalised.
    pub instance: Option<InstanceStats>,
}

impl WindowBatch {
    pub fn batch_size(&self) -> usize {
        self.x.shape()[0]
    }

    /// Builds a batch from window start offsets; `y` starts where `x` ends.
    pub fn gather(frame: &SeriesFrame, offsets: &[usize], lookback: usize, horizon: usize, instance_norm: bool) -> Result<Self> {
        let c = frame.channels();
        let mut xs = Vec::with_capacity(offsets.len() * lookback * c);
        let mut ys = Vec::with_capacity(offsets.len() * horizon * c);
        for &o in offsets {
            if o + lookback + horizon > frame.len() {
                return Err(Error::dim("windows", format!("window at {o} runs past the frame")));
            }
            xs.extend_from_slice(&frame.values()[o * c..(o + lookback) * c]);
            ys.extend_from_slice(&frame.values()[(o + lookback) * c..(o + lookback + horizon) * c]);
        }
        let x = Tensor::new(vec![offsets.len(), lookback, c], xs)?;
        let y = Tensor::new(vec![offsets.len(), horizon, c], ys)?;
        if instance_norm {
            let (x, stats) = instance_normalize(&x)?;
            Ok(Self { x, y, instance: Some(stats) })
        } else {
            Ok(Self { x, y, instance: None })
        }
    }
}

/// Start offsets of every window whose history and target lie inside a range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Windows {
    pub offsets: Vec<usize>,
    pub lookback: usize,
    pub horizon: usize,
}

/// Windows at `range.start`, `+stride`, … with the target fully inside `range`.
pub fn make_windows(range: Range<usize>, lookback: usize, horizon: usize, stride: usize) -> Result<Windows> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config("lookback, horizon and stride must be at least 1".into()));
    }
    let offsets = (range.start..)
        .step_by(stride)
        .take_while(|&o| o + lookback + horizon <= range.end)
        .collect();
    Ok(Windows { offsets, lookback, horizon })
}

impl Windows {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Same windows in a seeded random order.
    pub fn shuffled(&self, seed: u64) -> Windows {
        let mut offsets = self.offsets.clone();
        offsets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Windows { offsets, ..*self }
    }

    /// Keeps every `k`-th window so at most `max` remain (evenly spaced).
    pub fn thinned(&self, max: usize) -> Windows {
        if max == 0 || self.offsets.len() <= max {
            return self.clone();
        }
        let k = self.offsets.len().div_ceil(max);
        let offsets = self.offsets.iter().step_by(k).copied().collect();
        Windows { offsets, ..*self }
    }

    pub fn batches<'a>(
        &'a self,
        frame: &'a SeriesFrame,
        batch_size: usize,
        instance_norm: bool,
    ) -> impl Iterator<Item = Result<WindowBatch>> + 'a {
        self.offsets
            .chunks(batch_size.max(1))
            .map(move |chunk| WindowBatch::gather(frame, chunk, self.lookback, self.horizon, instance_norm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counting_examples() {
        assert_eq!(make_windows(0..10, 4, 2, 1).unwrap().len(), 5);
        let w = make_windows(0..8, 2, 2, 2).unwrap();
        assert_eq!(w.offsets, vec![0, 2, 4]);
        let last = *w.offsets.last().unwrap();
        assert_eq!(last + 2 + 2, 8);
        assert!(make_windows(0..3, 2, 2, 1).unwrap().is_empty());
    }

    #[test]
    fn y_starts_where_x_ends() {
        let values: Vec<f64> = (0..20).map(|v| v as f64).collect();
        let f = SeriesFrame::new(values, vec!["a".into(), "b".into()], None).unwrap();
        let w = make_windows(0..10, 3, 2, 1).unwrap();
        let b = WindowBatch::gather(&f, &w.offsets[1..3], 3, 2, false).unwrap();
        assert_eq!(b.x.shape(), &[2, 3, 2]);
        // window at offset 1: rows 1..4 history, rows 4..6 target
        assert_eq!(b.x.get(&[0, 2, 0]), 6.0);
        assert_eq!(b.y.get(&[0, 0, 0]), 8.0);
        assert_eq!(b.y.get(&[1, 1, 1]), 13.0);
    }

    #[test]
    fn shuffle_is_seeded() {
        let w = make_windows(0..100, 4, 4, 1).unwrap();
        assert_eq!(w.shuffled(3), w.shuffled(3));
        assert_ne!(w.shuffled(3).offsets, w.offsets);
    }

    proptest! {
        #[test]
        fn count_formula(len in 1usize..200, t in 1usize..20, p in 1usize..20, stride in 1usize..7, start in 0usize..50) {
            let w = make_windows(start..start + len, t, p, stride).unwrap();
            let expect = if len >= t + p { (len - t - p) / stride + 1 } else { 0 };
            prop_assert_eq!(w.len(), expect);
            for &o in &w.offsets {
                prop_assert!(o + t + p <= start + len);
            }
        }
    }
}
