use std::ops::Range;

use super::SeriesFrame;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Floor applied to per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-8;
/// Floor applied to per-window standard deviations.
pub const INSTANCE_STD_FLOOR: f64 = 1e-5;

/// Per-channel z-scoring statistics fit on the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_standardizer(frame: &SeriesFrame, train: Range<usize>) -> Result<NormStats> {
    if train.is_empty() || train.end > frame.len() {
        return Err(Error::Config(format!("invalid train range {train:?}")));
    }
    let n = train.len() as f64;
    let c = frame.channels();
    let mut mean = vec![0.0; c];
    for r in train.clone() {
        mean.iter_mut().zip(frame.row(r)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for r in train {
        for ((s, v), m) in var.iter_mut().zip(frame.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

impl NormStats {
    pub fn apply(&self, frame: &SeriesFrame) -> SeriesFrame {
        frame.map_values(|c, v| (v - self.mean[c]) / self.std[c])
    }

    pub fn invert(&self, frame: &SeriesFrame) -> SeriesFrame {
        frame.map_values(|c, v| v * self.std[c] + self.mean[c])
    }
}

/// Per-window, per-channel statistics over the time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStats {
    /// `batch × channels`, row-major.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub channels: usize,
}

/// Normalises each window/channel of `x: [B, T, C]` by its own mean and
/// population standard deviation over `T`.
pub fn instance_normalize(x: &Tensor) -> Result<(Tensor, InstanceStats)> {
    let [b, t, c] = *x.shape() else {
        return Err(Error::dim("instance_normalize", format!("expected [B, T, C], got {:?}", x.shape())));
    };
    if t < 2 {
        return Err(Error::dim("instance_normalize", "needs at least two time steps"));
    }
    let d = x.data();
    let mut mean = vec![0.0; b * c];
    let mut std = vec![0.0; b * c];
    for bi in 0..b {
        for ci in 0..c {
            let col = (0..t).map(|ti| d[(bi * t + ti) * c + ci]);
            let m = col.clone().sum::<f64>() / t as f64;
            let v = col.map(|x| (x - m) * (x - m)).sum::<f64>() / t as f64;
            mean[bi * c + ci] = m;
            std[bi * c + ci] = v.sqrt().max(INSTANCE_STD_FLOOR);
        }
    }
    let out = d
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (bi, ci) = (i / (t * c), i % c);
            (v - mean[bi * c + ci]) / std[bi * c + ci]
        })
        .collect();
    Ok((Tensor::new(vec![b, t, c], out)?, InstanceStats { mean, std, channels: c }))
}

/// Inverse affine map for any `[B, L, C]` tensor normalised with `stats`.
pub fn instance_denormalize(y: &Tensor, stats: &InstanceStats) -> Result<Tensor> {
    let [b, l, c] = *y.shape() else {
        return Err(Error::dim("instance_denormalize", format!("expected [B, L, C], got {:?}", y.shape())));
    };
    if c != stats.channels || b * c != stats.mean.len() {
        return Err(Error::dim("instance_denormalize", "statistics do not match tensor"));
    }
    let out = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (bi, ci) = (i / (l * c), i % c);
            v * stats.std[bi * c + ci] + stats.mean[bi * c + ci]
        })
        .collect();
    Tensor::new(vec![b, l, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(cols: &[Vec<f64>]) -> SeriesFrame {
        let len = cols[0].len();
        let values = (0..len).flat_map(|r| cols.iter().map(move |c| c[r])).collect();
        let names = (0..cols.len()).map(|i| format!("c{i}")).collect();
        SeriesFrame::new(values, names, None).unwrap()
    }

    #[test]
    fn constant_channel_is_floored() {
        let f = frame(&[vec![5.0; 4]]);
        let s = fit_standardizer(&f, 0..4).unwrap();
        assert_eq!(s.mean, vec![5.0]);
        assert_eq!(s.std, vec![STD_FLOOR]);
        assert!(s.apply(&f).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_channel() {
        let f = frame(&[vec![0.0, 2.0]]);
        let s = fit_standardizer(&f, 0..2).unwrap();
        assert_eq!((s.mean[0], s.std[0]), (1.0, 1.0));
        assert_eq!(s.apply(&f).values(), &[-1.0, 1.0]);
        assert!(fit_standardizer(&f, 0..0).is_err());
    }

    #[test]
    fn standardizer_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cols: Vec<Vec<f64>> = (0..3).map(|k| (0..50).map(|_| rng.random_range(-10.0..10.0) * (k + 1) as f64).collect()).collect();
        let f = frame(&cols);
        let s = fit_standardizer(&f, 0..30).unwrap();
        let back = s.invert(&s.apply(&f));
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn instance_norm_examples() {
        let x = Tensor::new(vec![1, 2, 1], vec![1.0, 3.0]).unwrap();
        let (n, _) = instance_normalize(&x).unwrap();
        assert_eq!(n.data(), &[-1.0, 1.0]);

        let x = Tensor::new(vec![1, 3, 1], vec![2.0, 2.0, 2.0]).unwrap();
        let (n, st) = instance_normalize(&x).unwrap();
        assert_eq!(n.data(), &[0.0, 0.0, 0.0]);
        assert_eq!(st.std, vec![INSTANCE_STD_FLOOR]);

        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        assert!(instance_normalize(&x).is_err());
    }

    #[test]
    fn instance_norm_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..3 * 7 * 4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = Tensor::new(vec![3, 7, 4], data).unwrap();
        let (n, st) = instance_normalize(&x).unwrap();
        let back = instance_denormalize(&n, &st).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
