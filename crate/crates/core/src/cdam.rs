//! Information-bottleneck terms.
//!
//! With unit-variance Gaussian likelihoods the two lower-bound terms are
//! plain mean squared errors (the `½·ln 2π` constants and the `½` factor are
//! dropped). The cross-channel term is the sampled vCLUB estimate
//!
//! ```text
//! (1/N) Σ_n [ log q(z_n | x°_n) − log q(z_n | x°_{k'_n}) ]
//! ```
//!
//! where `k'_n` is drawn uniformly from the batch (self-pairs allowed) and
//! each log-density is summed over the latent dimensions.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{Bind, Posterior};
use crate::numcore::{Adam, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IBConfig {
    pub beta: f64,
    pub recon_weight: f64,
}

impl Default for IBConfig {
    fn default() -> Self {
        Self { beta: 1.0, recon_weight: 1.0 }
    }
}

impl IBConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be a finite value >= 0, got {}", self.beta)));
        }
        if !(self.recon_weight >= 0.0 && self.recon_weight.is_finite()) {
            return Err(Error::Config(format!("recon_weight must be a finite value >= 0, got {}", self.recon_weight)));
        }
        Ok(())
    }
}

/// Named loss terms of one step (or their means over an epoch).
///
/// `l_ib = pred_nll + recon_weight·recon_nll + β·vclub` and
/// `total = l_ib + Σ levels + l_p`; inactive terms are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBreakdown {
    pub pred_nll: f64,
    pub recon_nll: f64,
    pub vclub: f64,
    pub l_ib: f64,
    /// `L_n` for `n = 1..=N`.
    pub levels: Vec<f64>,
    pub l_p: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "pred_nll,recon_nll,vclub,l_ib,l_tam,l_p,total";

    pub fn l_tam(&self) -> f64 {
        self.levels.iter().sum()
    }

    /// `l_ib + Σ levels + l_p`.
    pub fn combined(&self) -> f64 {
        self.l_ib + self.l_tam() + self.l_p
    }

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            self.pred_nll,
            self.recon_nll,
            self.vclub,
            self.l_ib,
            self.l_tam(),
            self.l_p,
            self.total
        );
        s
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len();
        if n == 0 {
            return LossBreakdown::default();
        }
        let avg = |f: &dyn Fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n as f64;
        let levels = (0..items[0].levels.len())
            .map(|k| items.iter().map(|b| b.levels.get(k).copied().unwrap_or(0.0)).sum::<f64>() / n as f64)
            .collect();
        LossBreakdown {
            pred_nll: avg(&|b| b.pred_nll),
            recon_nll: avg(&|b| b.recon_nll),
            vclub: avg(&|b| b.vclub),
            l_ib: avg(&|b| b.l_ib),
            levels,
            l_p: avg(&|b| b.l_p),
            total: avg(&|b| b.total),
        }
    }
}

/// `(MSE(ŷ, y), MSE(x̂, x))`, the negated lower-bound terms.
pub fn lower_bound_loss(tape: &mut Tape, y_hat: Var, y: Var, x_hat: Var, x: Var) -> Result<(Var, Var)> {
    if tape.shape(y_hat) != tape.shape(y) || tape.shape(x_hat) != tape.shape(x) {
        return Err(Error::dim("lower_bound_loss", "prediction and target shapes differ"));
    }
    Ok((tape.mse(y_hat, y)?, tape.mse(x_hat, x)?))
}

/// `pred + recon_weight·recon + β·vclub`.
pub fn ib_loss(tape: &mut Tape, pred: Var, recon: Var, vclub: Var, cfg: &IBConfig) -> Result<Var> {
    let r = tape.scale(recon, cfg.recon_weight)?;
    let v = tape.scale(vclub, cfg.beta)?;
    let s = tape.add(pred, r)?;
    tape.add(s, v)
}

/// Scalar form of [`ib_loss`].
pub fn ib_value(pred: f64, recon: f64, vclub: f64, cfg: &IBConfig) -> f64 {
    pred + cfg.recon_weight * recon + cfg.beta * vclub
}

/// Mean of `pos − neg` over paired per-sample log-densities.
pub fn vclub_from_log_densities(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(Error::dim("vclub", "empty batch"));
    }
    if pos.len() != neg.len() {
        return Err(Error::dim("vclub", "positive and negative counts differ"));
    }
    Ok(pos.iter().zip(neg).map(|(p, n)| p - n).sum::<f64>() / pos.len() as f64)
}

/// Uniform negative partners `k'_n ∈ {0..batch}`.
pub fn sample_negatives(batch: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..batch)).collect()
}

/// Maps per-sample partners onto channel rows `b·k + j → k'_b·k + j`.
pub fn negative_rows(neg_idx: &[usize], per_sample: usize) -> Vec<usize> {
    neg_idx
        .iter()
        .flat_map(|&k| (0..per_sample).map(move |j| k * per_sample + j))
        .collect()
}

/// Sampled vCLUB from posterior parameters evaluated at every row's own
/// input. `neg_rows[r]` names the row whose input is paired with `z[r]`.
///
/// Only `z` (and whatever produced `mean`/`logvar`) is differentiated, so
/// record the posterior with [`Bind::Frozen`] to keep `q` fixed.
pub fn vclub_estimate(tape: &mut Tape, z: Var, mean: Var, logvar: Var, neg_rows: &[usize]) -> Result<Var> {
    let (rows, d) = tape.value(z).dims2("vclub")?;
    if rows == 0 {
        return Err(Error::dim("vclub", "empty batch"));
    }
    if neg_rows.len() != rows {
        return Err(Error::dim("vclub", format!("{} negative indices for {rows} rows", neg_rows.len())));
    }
    let pos = tape.gaussian_log_density(z, mean, logvar)?;
    let nm = tape.gather_rows(mean, neg_rows)?;
    let nl = tape.gather_rows(logvar, neg_rows)?;
    let neg = tape.gaussian_log_density(z, nm, nl)?;
    let diff = tape.sub(pos, neg)?;
    let m = tape.mean(diff)?;
    tape.scale(m, d as f64)
}

/// Mean over rows of `Σ_d log q(z | input)` recorded on `tape`.
pub fn mean_log_likelihood(tape: &mut Tape, store: &ParamStore, q: &Posterior, z: &Tensor, input: &Tensor, mode: Bind) -> Result<Var> {
    let d = z.last_axis().1;
    let inp = tape.constant(input.clone())?;
    let zc = tape.constant(z.clone())?;
    let (m, lv) = q.forward(tape, store, inp, mode)?;
    let ld = tape.gaussian_log_density(zc, m, lv)?;
    let mean = tape.mean(ld)?;
    tape.scale(mean, d as f64)
}

/// One Adam step of `q` towards maximum likelihood on detached `z`.
/// Returns the mean log-likelihood before the step.
///
/// Gradients of all parameters are zeroed before and after.
pub fn posterior_fit_step(store: &mut ParamStore, q: &Posterior, z: &Tensor, input: &Tensor, adam: &mut Adam) -> Result<f64> {
    let mut tape = Tape::new();
    let ll = mean_log_likelihood(&mut tape, store, q, z, input, Bind::Trainable)?;
    let value = tape.scalar(ll);
    let nll = tape.scale(ll, -1.0)?;
    store.zero_grad();
    tape.backward(nll, store)?;
    adam.step(store)?;
    store.zero_grad();
    Ok(value)
}

/// vCLUB of `z` against a fixed posterior, evaluated without a gradient path.
pub fn vclub_value(store: &ParamStore, q: &Posterior, z: &Tensor, input: &Tensor, neg_rows: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let inp = tape.constant(input.clone())?;
    let zc = tape.constant(z.clone())?;
    let (m, lv) = q.forward(&mut tape, store, inp, Bind::Frozen)?;
    let v = vclub_estimate(&mut tape, zc, m, lv, neg_rows)?;
    Ok(tape.scalar(v))
}
