//! Multi-resolution temporal losses.
//!
//! A horizon of `P` steps is split at level `n` into `m = 2^n` strided
//! sub-sequences (sub-sequence `j` holds positions `j, j+m, j+2m, …`). Each
//! forecast sub-sequence predicts its left and right neighbours; the
//! predictions are scored against the true neighbours (`L_n`) and spliced
//! into an auxiliary full-length forecast `Ŷ_n`. The blended forecast
//! `λ·mean_n Ŷ_n + (1−λ)·Ŷ` is scored by `L_p`.
//!
//! Slot indices in this module are 0-based.

use crate::error::{Error, Result};
use crate::models::{Bind, Direction, Forward, Model};
use crate::numcore::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TamConfig {
    pub levels: usize,
    pub lambda: f64,
}

impl Default for TamConfig {
    fn default() -> Self {
        Self { levels: 2, lambda: 0.8 }
    }
}

impl TamConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        check_level(horizon, self.levels)
    }
}

fn check_level(horizon: usize, level: usize) -> Result<()> {
    if level >= usize::BITS as usize || horizon % (1usize << level) != 0 {
        return Err(Error::Config(format!("horizon {horizon} is not divisible by 2^{level}")));
    }
    Ok(())
}

/// The `m = 2^level` strided sub-sequences of a `[B, P, C]` series.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSequenceSet {
    pub level: usize,
    /// `m` tensors of shape `[B, P/m, C]`.
    pub subs: Vec<Tensor>,
}

/// Strided split of `series: [B, P, C]`.
pub fn downsample(series: &Tensor, level: usize) -> Result<SubSequenceSet> {
    let [b, p, c] = *series.shape() else {
        return Err(Error::dim("downsample", format!("expected [B, P, C], got {:?}", series.shape())));
    };
    check_level(p, level)?;
    let m = 1 << level;
    let len = p / m;
    let d = series.data();
    let subs = (0..m)
        .map(|j| {
            let mut out = Vec::with_capacity(b * len * c);
            for bi in 0..b {
                for k in 0..len {
                    let t = j + k * m;
                    out.extend_from_slice(&d[(bi * p + t) * c..(bi * p + t + 1) * c]);
                }
            }
            Tensor::new(vec![b, len, c], out)
        })
        .collect::<Result<_>>()?;
    Ok(SubSequenceSet { level, subs })
}

/// Exact inverse of [`downsample`].
pub fn inverse_interleave(set: &SubSequenceSet) -> Result<Tensor> {
    let m = 1usize << set.level;
    if set.subs.len() != m {
        return Err(Error::dim("inverse_interleave", format!("{} sub-sequences for level {}", set.subs.len(), set.level)));
    }
    let shape = set.subs[0].shape().to_vec();
    let [b, len, c] = shape[..] else {
        return Err(Error::dim("inverse_interleave", format!("expected [B, L, C], got {shape:?}")));
    };
    if set.subs.iter().any(|s| s.shape() != shape.as_slice()) {
        return Err(Error::dim("inverse_interleave", "sub-sequences differ in shape"));
    }
    let p = len * m;
    let mut out = vec![0.0; b * p * c];
    for (j, s) in set.subs.iter().enumerate() {
        for bi in 0..b {
            for k in 0..len {
                let t = j + k * m;
                out[(bi * p + t) * c..(bi * p + t + 1) * c].copy_from_slice(&s.data()[(bi * len + k) * c..(bi * len + k + 1) * c]);
            }
        }
    }
    Tensor::new(vec![b, p, c], out)
}

/// Strided split of channel rows `y: [R, P]` into `m` vars of `[R, P/m]`.
pub fn downsample_rows(tape: &mut Tape, y: Var, level: usize) -> Result<Vec<Var>> {
    let p = tape.value(y).last_axis().1;
    check_level(p, level)?;
    let m = 1 << level;
    (0..m)
        .map(|j| {
            let idx: Vec<usize> = (j..p).step_by(m).collect();
            tape.gather_cols(y, &idx)
        })
        .collect()
}

/// Inverse of [`downsample_rows`].
pub fn interleave_rows(tape: &mut Tape, subs: &[Var]) -> Result<Var> {
    let m = subs.len();
    if m == 0 || !m.is_power_of_two() {
        return Err(Error::dim("interleave", format!("{m} sub-sequences is not a power of two")));
    }
    let len = tape.value(subs[0]).last_axis().1;
    if subs.iter().any(|&s| tape.value(s).last_axis().1 != len) {
        return Err(Error::dim("interleave", "sub-sequences differ in length"));
    }
    let slots = tape.concat(subs)?;
    let perm: Vec<usize> = (0..m * len).map(|p| (p % m) * len + p / m).collect();
    tape.gather_cols(slots, &perm)
}

/// Adjacent predictions at one level, indexed by the slot they target.
#[derive(Debug, Clone)]
pub struct AdjacentPredictions {
    pub level: usize,
    /// `from_right[j]`: prediction of slot `j` made from `ŷ_{j+1}` (left direction).
    pub from_right: Vec<Option<Var>>,
    /// `from_left[j]`: prediction of slot `j` made from `ŷ_{j-1}` (right direction).
    pub from_left: Vec<Option<Var>>,
}

impl AdjacentPredictions {
    pub fn term_count(&self) -> usize {
        self.from_right.iter().chain(&self.from_left).filter(|p| p.is_some()).count()
    }
}

/// Runs the level's predictors over every forecast sub-sequence.
pub fn predict_level(tape: &mut Tape, model: &Model, y_hat_subs: &[Var], embedding: Var, level: usize, mode: Bind) -> Result<AdjacentPredictions> {
    let m = y_hat_subs.len();
    if m != 1 << level || m < 2 {
        return Err(Error::dim("predict_level", format!("{m} sub-sequences for level {level}")));
    }
    let mut from_right = vec![None; m];
    let mut from_left = vec![None; m];
    for (j, &sub) in y_hat_subs.iter().enumerate() {
        if j > 0 {
            from_right[j - 1] = Some(model.predict_adjacent(tape, sub, embedding, level, Direction::Left, mode)?);
        }
        if j + 1 < m {
            from_left[j + 1] = Some(model.predict_adjacent(tape, sub, embedding, level, Direction::Right, mode)?);
        }
    }
    Ok(AdjacentPredictions { level, from_right, from_left })
}

/// `L_n = Σ_terms MSE(prediction, true neighbour) / m` over the
/// `2·(m−1)` adjacent terms.
pub fn tam_level_loss(tape: &mut Tape, preds: &AdjacentPredictions, y_subs: &[Var]) -> Result<Var> {
    let m = 1usize << preds.level;
    if y_subs.len() != m || preds.from_right.len() != m || preds.from_left.len() != m {
        return Err(Error::dim("tam_level_loss", format!("level {} expects {m} sub-sequences", preds.level)));
    }
    let mut terms = Vec::with_capacity(2 * (m - 1));
    for (j, &target) in y_subs.iter().enumerate() {
        for p in [preds.from_right[j], preds.from_left[j]].into_iter().flatten() {
            terms.push(tape.mse(p, target)?);
        }
    }
    let first = *terms.first().ok_or_else(|| Error::dim("tam_level_loss", "no terms"))?;
    let mut sum = first;
    for &t in &terms[1..] {
        sum = tape.add(sum, t)?;
    }
    tape.scale(sum, 1.0 / m as f64)
}

/// Where a spliced slot came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotSource {
    /// Only the right neighbour's prediction (first slot).
    RightNeighbour,
    /// Only the left neighbour's prediction (last slot).
    LeftNeighbour,
    Averaged,
}

#[derive(Debug, Clone)]
pub struct SpliceResult {
    /// `Ŷ_n: [R, P]`.
    pub series: Var,
    pub sources: Vec<SlotSource>,
}

/// Assembles slot predictions into `Ŷ_n` and re-interleaves them.
pub fn splice_predictions(tape: &mut Tape, preds: &AdjacentPredictions) -> Result<SpliceResult> {
    let m = preds.from_right.len();
    let missing = || Error::Contract(format!("level {} is missing an adjacent prediction", preds.level));
    let mut slots = Vec::with_capacity(m);
    let mut sources = Vec::with_capacity(m);
    for j in 0..m {
        let (r, l) = (preds.from_right[j], preds.from_left[j]);
        if j == 0 {
            slots.push(r.ok_or_else(missing)?);
            sources.push(SlotSource::RightNeighbour);
        } else if j + 1 == m {
            slots.push(l.ok_or_else(missing)?);
            sources.push(SlotSource::LeftNeighbour);
        } else {
            let s = tape.add(r.ok_or_else(missing)?, l.ok_or_else(missing)?)?;
            slots.push(tape.scale(s, 0.5)?);
            sources.push(SlotSource::Averaged);
        }
    }
    Ok(SpliceResult { series: interleave_rows(tape, &slots)?, sources })
}

/// `Ŷ_final = λ·mean(Ŷ_n) + (1−λ)·Ŷ`; with no spliced series `Ŷ_final = Ŷ`.
///
/// Evaluated as `Ŷ + λ·(M − Ŷ)` with `M = Ŷ_1 + Σ(Ŷ_n − Ŷ_1)/N`, so equal
/// inputs come back bit-for-bit.
pub fn blend(tape: &mut Tape, y_hat: Var, spliced: &[Var], lambda: f64) -> Result<Var> {
    let Some((&first, rest)) = spliced.split_first() else {
        return Ok(y_hat);
    };
    let mut mean = first;
    if !rest.is_empty() {
        let mut acc = tape.sub(rest[0], first)?;
        for &s in &rest[1..] {
            let d = tape.sub(s, first)?;
            acc = tape.add(acc, d)?;
        }
        let acc = tape.scale(acc, 1.0 / spliced.len() as f64)?;
        mean = tape.add(first, acc)?;
    }
    let gap = tape.sub(mean, y_hat)?;
    let gap = tape.scale(gap, lambda)?;
    tape.add(y_hat, gap)
}

/// `(Ŷ_final, MSE(Y, Ŷ_final))`.
pub fn blend_and_lp(tape: &mut Tape, y_hat: Var, spliced: &[Var], y: Var, lambda: f64) -> Result<(Var, Var)> {
    let fin = blend(tape, y_hat, spliced, lambda)?;
    let lp = tape.mse(fin, y)?;
    Ok((fin, lp))
}

/// `L_IB + Σ L_n + L_p`, rejecting non-finite terms by name.
pub fn total_loss(l_ib: f64, levels: &[f64], l_p: f64) -> Result<f64> {
    let named = std::iter::once(("L_IB".to_string(), l_ib))
        .chain(levels.iter().enumerate().map(|(n, &v)| (format!("L_{}", n + 1), v)))
        .chain(std::iter::once(("L_p".to_string(), l_p)));
    let mut sum = 0.0;
    for (name, v) in named {
        if !v.is_finite() {
            return Err(Error::Contract(format!("loss term {name} is not finite ({v})")));
        }
        sum += v;
    }
    Ok(sum)
}

/// Everything the adjacent predictors contribute for one batch.
#[derive(Debug, Clone)]
pub struct TamOutput {
    /// `L_n` for `n = 1..=N` (empty without targets).
    pub level_losses: Vec<Var>,
    pub spliced: Vec<Var>,
    pub blended: Var,
    pub l_p: Option<Var>,
}

/// Runs every level on a model forward pass; losses need `y: [R, P]`.
pub fn tam_pass(tape: &mut Tape, model: &Model, fwd: &Forward, y: Option<Var>, cfg: &TamConfig, mode: Bind) -> Result<TamOutput> {
    let embedding = model.embed_history(tape, fwd.history, mode)?;
    let mut level_losses = Vec::with_capacity(cfg.levels);
    let mut spliced = Vec::with_capacity(cfg.levels);
    for level in 1..=cfg.levels {
        let subs = downsample_rows(tape, fwd.y_hat, level)?;
        let preds = predict_level(tape, model, &subs, embedding, level, mode)?;
        if let Some(y) = y {
            let y_subs = downsample_rows(tape, y, level)?;
            level_losses.push(tam_level_loss(tape, &preds, &y_subs)?);
        }
        spliced.push(splice_predictions(tape, &preds)?.series);
    }
    let blended = blend(tape, fwd.y_hat, &spliced, cfg.lambda)?;
    let l_p = y.map(|y| tape.mse(blended, y)).transpose()?;
    Ok(TamOutput { level_losses, spliced, blended, l_p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Head, ModelConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(values: &[f64]) -> Tensor {
        Tensor::new(vec![1, values.len(), 1], values.to_vec()).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn downsample_examples() {
        let s = downsample(&series(&[1.0, 2.0, 3.0, 4.0]), 1).unwrap();
        assert_eq!(s.subs, vec![series(&[1.0, 3.0]), series(&[2.0, 4.0])]);
        let eight: Vec<f64> = (1..=8).map(f64::from).collect();
        let s = downsample(&series(&eight), 2).unwrap();
        let expect = [[1.0, 5.0], [2.0, 6.0], [3.0, 7.0], [4.0, 8.0]];
        for (sub, e) in s.subs.iter().zip(expect) {
            assert_eq!(sub.data(), &e);
        }
        assert!(matches!(downsample(&series(&[0.0; 6]), 2), Err(Error::Config(_))));
    }

    #[test]
    fn interleave_examples() {
        let set = SubSequenceSet { level: 1, subs: vec![series(&[1.0, 3.0]), series(&[2.0, 4.0])] };
        assert_eq!(inverse_interleave(&set).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        let bad = SubSequenceSet { level: 1, subs: vec![series(&[1.0, 3.0]), series(&[2.0])] };
        assert!(inverse_interleave(&bad).is_err());
        // position = slot + m·offset
        let s = downsample(&series(&(0..16).map(f64::from).collect::<Vec<_>>()), 2).unwrap();
        for (j, sub) in s.subs.iter().enumerate() {
            for (k, &v) in sub.data().iter().enumerate() {
                assert_eq!(v, (j + 4 * k) as f64);
            }
        }
    }

    #[test]
    fn row_variants_agree_with_tensor_variants() {
        let y = random(&[6, 8], 1);
        let mut tape = Tape::new();
        let yv = tape.constant(y.clone()).unwrap();
        let subs = downsample_rows(&mut tape, yv, 2).unwrap();
        let as_series = y.clone().reshape(vec![6, 8, 1]).unwrap();
        let set = downsample(&as_series, 2).unwrap();
        for (v, t) in subs.iter().zip(&set.subs) {
            assert_eq!(tape.value(*v).data(), t.data());
        }
        let back = interleave_rows(&mut tape, &subs).unwrap();
        assert_eq!(tape.value(back).data(), y.data());
    }

    fn preds_from(tape: &mut Tape, level: usize, make: impl Fn(usize, Direction) -> Tensor) -> AdjacentPredictions {
        let m = 1 << level;
        let mut from_right = vec![None; m];
        let mut from_left = vec![None; m];
        for j in 0..m {
            if j + 1 < m {
                from_right[j] = Some(tape.constant(make(j, Direction::Left)).unwrap());
            }
            if j > 0 {
                from_left[j] = Some(tape.constant(make(j, Direction::Right)).unwrap());
            }
        }
        AdjacentPredictions { level, from_right, from_left }
    }

    #[test]
    fn term_counts() {
        let mut tape = Tape::new();
        for level in 1..=3 {
            let p = preds_from(&mut tape, level, |_, _| Tensor::zeros(&[2, 1]));
            assert_eq!(p.term_count(), 2 * ((1 << level) - 1));
        }
    }

    #[test]
    fn perfect_predictions() {
        let y = random(&[3, 8], 2);
        let mut tape = Tape::new();
        let yv = tape.constant(y.clone()).unwrap();
        let y_subs = downsample_rows(&mut tape, yv, 2).unwrap();
        let truth: Vec<Tensor> = y_subs.iter().map(|&v| tape.value(v).clone()).collect();
        let preds = preds_from(&mut tape, 2, |j, _| truth[j].clone());
        let l = tam_level_loss(&mut tape, &preds, &y_subs).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        let sp = splice_predictions(&mut tape, &preds).unwrap();
        assert_eq!(tape.value(sp.series).data(), y.data());
        assert_eq!(sp.sources, vec![SlotSource::RightNeighbour, SlotSource::Averaged, SlotSource::Averaged, SlotSource::LeftNeighbour]);
    }

    #[test]
    fn level_loss_by_hand() {
        // m = 2: terms MSE(from ŷ_2 → y_1) + MSE(from ŷ_1 → y_2), divided by 2.
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        let y_subs = downsample_rows(&mut tape, y, 1).unwrap();
        let preds = preds_from(&mut tape, 1, |_, d| Tensor::full(&[1, 1], if d == Direction::Left { 1.0 } else { 3.0 }));
        let l = tam_level_loss(&mut tape, &preds, &y_subs).unwrap();
        assert!((tape.scalar(l) - (1.0 + 9.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn interior_slots_average() {
        let mut tape = Tape::new();
        let preds = preds_from(&mut tape, 2, |j, d| {
            let v = 10.0 * j as f64 + if d == Direction::Left { 1.0 } else { 2.0 };
            Tensor::full(&[1, 2], v)
        });
        let sp = splice_predictions(&mut tape, &preds).unwrap();
        let out = tape.value(sp.series).data().to_vec();
        // positions p map to slot p % 4
        assert_eq!(out, vec![1.0, 11.5, 21.5, 32.0, 1.0, 11.5, 21.5, 32.0]);
        let mut incomplete = preds.clone();
        incomplete.from_left[2] = None;
        assert!(splice_predictions(&mut tape, &incomplete).is_err());
    }

    #[test]
    fn splice_level_one() {
        let mut tape = Tape::new();
        let preds = preds_from(&mut tape, 1, |j, _| Tensor::full(&[1, 3], j as f64 + 1.0));
        let sp = splice_predictions(&mut tape, &preds).unwrap();
        assert_eq!(tape.value(sp.series).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn blend_examples() {
        let mut tape = Tape::new();
        let (yh, y1, y2, y) = (
            tape.constant(random(&[2, 4], 1)).unwrap(),
            tape.constant(random(&[2, 4], 2)).unwrap(),
            tape.constant(random(&[2, 4], 3)).unwrap(),
            tape.constant(random(&[2, 4], 4)).unwrap(),
        );
        let (f, lp) = blend_and_lp(&mut tape, yh, &[y1, y2], y, 0.0).unwrap();
        assert_eq!(tape.value(f).data(), tape.value(yh).data());
        let direct = tape.mse(yh, y).unwrap();
        assert_eq!(tape.scalar(lp), tape.scalar(direct));
        let (f, _) = blend_and_lp(&mut tape, yh, &[y1], y, 1.0).unwrap();
        assert_eq!(tape.value(f).data(), tape.value(y1).data());
        let (f, lp) = blend_and_lp(&mut tape, y, &[y, y], y, 0.37).unwrap();
        assert_eq!(tape.value(f).data(), tape.value(y).data());
        assert_eq!(tape.scalar(lp), 0.0);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.0, &[0.0, 0.0], 0.0).unwrap(), 0.0);
        assert!((total_loss(0.3, &[0.1, 0.1], 0.5).unwrap() - 1.0).abs() < 1e-15);
        let err = total_loss(0.3, &[0.1, f64::NAN], 0.5).unwrap_err().to_string();
        assert!(err.contains("L_2"), "{err}");
        assert!(total_loss(f64::INFINITY, &[], 0.0).unwrap_err().to_string().contains("L_IB"));
    }

    #[test]
    fn disabled_tam_is_cdam_objective() {
        let mut tape = Tape::new();
        let (yh, y) = (tape.constant(random(&[2, 4], 1)).unwrap(), tape.constant(random(&[2, 4], 2)).unwrap());
        let (_, lp) = blend_and_lp(&mut tape, yh, &[], y, 0.0).unwrap();
        let mse = tape.mse(yh, y).unwrap();
        assert_eq!(total_loss(0.25, &[], tape.scalar(lp)).unwrap(), 0.25 + tape.scalar(mse));
    }

    #[test]
    fn config_checks() {
        assert!(TamConfig::default().validate(96).is_ok());
        assert!(TamConfig::default().validate(6).is_err());
        assert!(TamConfig { lambda: 1.5, ..Default::default() }.validate(8).is_err());
    }

    #[test]
    fn tam_pass_grad_check() {
        let cfg = ModelConfig { latent: 3, hidden: 5, head: Head::Rmlp, tam_levels: 2, ..ModelConfig::new(8, 8, 2) };
        let mut m = Model::new(cfg, 3).unwrap();
        let x = random(&[2, 8, 2], 4);
        let y = random(&[4, 8], 5);
        let probe = m.clone();
        let params = m.main_params();
        let tcfg = TamConfig::default();
        let check = crate::numcore::grad_check(&mut m.store, &params, 1e-5, |store, tape| {
            let mut net = probe.clone();
            net.store = store.clone();
            let f = net.forward(tape, &x, Bind::Trainable)?;
            let yv = tape.constant(y.clone())?;
            let out = tam_pass(tape, &net, &f, Some(yv), &tcfg, Bind::Trainable)?;
            let mut acc = out.l_p.unwrap();
            for l in out.level_losses {
                acc = tape.add(acc, l)?;
            }
            Ok(acc)
        })
        .unwrap();
        assert!(check.max_rel_error < 1e-4, "{check:?}");
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(level in 1usize..4, mult in 1usize..4, b in 1usize..3, c in 1usize..3, seed in 0u64..1000) {
            let p = mult << level;
            let s = random(&[b, p, c], seed);
            let set = downsample(&s, level).unwrap();
            prop_assert_eq!(set.subs.len(), 1 << level);
            prop_assert!(set.subs.iter().all(|t| t.shape()[1] == p >> level));
            prop_assert_eq!(inverse_interleave(&set).unwrap(), s);
        }

        #[test]
        fn blend_of_equal_inputs_is_identity(lambda in 0.0f64..=1.0, n in 0usize..4, seed in 0u64..100) {
            let mut tape = Tape::new();
            let s = tape.constant(random(&[3, 4], seed)).unwrap();
            let spliced = vec![s; n];
            let f = blend(&mut tape, s, &spliced, lambda).unwrap();
            prop_assert_eq!(tape.value(f).data(), tape.value(s).data());
        }
    }
}
