use crate::cdam::{ib_loss, lower_bound_loss, negative_rows, vclub_estimate, IBConfig, LossBreakdown};
use crate::error::{Error, Result};
use crate::models::{channel_rows, masked_history, Bind, Forward, Model};
use crate::numcore::{Tape, Tensor, Var};
use crate::tam::{tam_pass, total_loss, TamConfig};

use super::Arm;

/// Which terms make up the training loss and with which weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub arm: Arm,
    pub ib: IBConfig,
    pub tam: TamConfig,
}

/// Loss terms recorded on a tape.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub forward: Forward,
    pub pred: Var,
    pub recon: Option<Var>,
    pub vclub: Option<Var>,
    pub l_ib: Var,
    pub levels: Vec<Var>,
    pub l_p: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let opt = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        LossBreakdown {
            pred_nll: tape.scalar(self.pred),
            recon_nll: opt(self.recon),
            vclub: opt(self.vclub),
            l_ib: tape.scalar(self.l_ib),
            levels: self.levels.iter().map(|&v| tape.scalar(v)).collect(),
            l_p: opt(self.l_p),
            total: tape.scalar(self.total),
        }
    }
}

/// Records the arm's loss for one batch.
///
/// `neg_idx` holds one negative partner per sample and is required when the
/// arm has the bottleneck. The posterior is always recorded frozen.
pub fn record_objective(
    tape: &mut Tape,
    model: &Model,
    x: &Tensor,
    y: &Tensor,
    obj: &Objective,
    neg_idx: Option<&[usize]>,
    mode: Bind,
) -> Result<LossVars> {
    let head = record_likelihoods(tape, model, x, y, obj, mode)?;
    finish_objective(tape, model, head, obj, neg_idx, mode)
}

/// Forward pass plus the likelihood terms, before the posterior is read.
#[derive(Debug, Clone)]
pub(crate) struct Likelihoods {
    pub forward: Forward,
    pub y_rows: Var,
    pub pred: Var,
    pub recon: Option<Var>,
}

pub(crate) fn record_likelihoods(tape: &mut Tape, model: &Model, x: &Tensor, y: &Tensor, obj: &Objective, mode: Bind) -> Result<Likelihoods> {
    let forward = model.forward(tape, x, mode)?;
    let y_rows = tape.constant(channel_rows(y, &model.config.target_channels())?)?;
    let (pred, recon) = if obj.arm.bottleneck() {
        let z = forward.z.ok_or_else(|| Error::Contract("bottleneck arm without latents".into()))?;
        let x_hat = model.reconstruct(tape, z, mode)?;
        let (pred, recon) = lower_bound_loss(tape, forward.y_hat, y_rows, x_hat, forward.history)?;
        (pred, Some(recon))
    } else {
        (tape.mse(forward.y_hat, y_rows)?, None)
    };
    Ok(Likelihoods { forward, y_rows, pred, recon })
}

pub(crate) fn finish_objective(
    tape: &mut Tape,
    model: &Model,
    head: Likelihoods,
    obj: &Objective,
    neg_idx: Option<&[usize]>,
    mode: Bind,
) -> Result<LossVars> {
    let Likelihoods { forward: fwd, y_rows, pred, recon } = head;
    let targets = model.config.target_channels();
    let (vclub, l_ib) = match recon {
        Some(recon) => {
            let z = fwd.z.ok_or_else(|| Error::Contract("bottleneck arm without latents".into()))?;
            let neg = neg_idx.ok_or_else(|| Error::Contract("bottleneck arm needs negative indices".into()))?;
            if neg.len() != fwd.batch {
                return Err(Error::dim("objective", format!("{} negatives for batch {}", neg.len(), fwd.batch)));
            }
            let input = tape.constant(masked_history(&fwd.x, &targets)?)?;
            let (mean, logvar) = model.posterior(tape, input, Bind::Frozen)?;
            let vclub = vclub_estimate(tape, z, mean, logvar, &negative_rows(neg, targets.len()))?;
            (Some(vclub), ib_loss(tape, pred, recon, vclub, &obj.ib)?)
        }
        None => (None, pred),
    };

    let (levels, l_p) = if obj.arm.tam() {
        let out = tam_pass(tape, model, &fwd, Some(y_rows), &obj.tam, mode)?;
        (out.level_losses, out.l_p)
    } else {
        (Vec::new(), None)
    };

    let mut total = l_ib;
    for &l in levels.iter().chain(&l_p) {
        total = tape.add(total, l)?;
    }
    Ok(LossVars { forward: fwd, pred, recon, vclub, l_ib, levels, l_p, total })
}

/// Checks every term is finite, naming the first that is not.
pub(crate) fn check_terms(b: &LossBreakdown) -> Result<()> {
    for (name, v) in [("pred_nll", b.pred_nll), ("recon_nll", b.recon_nll), ("vclub", b.vclub)] {
        if !v.is_finite() {
            return Err(Error::Contract(format!("loss term {name} is not finite ({v})")));
        }
    }
    total_loss(b.l_ib, &b.levels, b.l_p).map(|_| ())
}
