//! The optimisation loop.
//!
//! Per batch, in order: forward pass; for bottleneck arms one posterior
//! update on the detached latents; the arm's loss with the (updated)
//! posterior frozen; one Adam step on every other parameter. Epochs end with
//! validation and test metrics; training stops once validation MSE has not
//! improved for `patience` epochs and the best weights are restored.

mod objective;
mod runlog;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use objective::{record_objective, LossVars, Objective};
pub use runlog::{EpochRow, RunLog};

use crate::cdam::{posterior_fit_step, sample_negatives, IBConfig, LossBreakdown};
use crate::data::{Dataset, Segment, WindowBatch, Windows};
use crate::error::{Error, Result};
use crate::eval::{ErrorAccumulator, Metrics};
use crate::models::{channel_rows, masked_history, Bind, Head, Mixing, Model, ModelConfig};
use crate::numcore::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use crate::tam::{tam_pass, TamConfig};

/// Loss configuration under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    /// Forecast MSE only.
    Original,
    /// Forecast MSE plus the multi-resolution terms.
    Tam,
    /// Bottleneck loss plus the multi-resolution terms.
    InfoTime,
    /// Bottleneck loss alone.
    Cdam,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Original, Arm::Tam, Arm::InfoTime, Arm::Cdam];

    pub fn bottleneck(self) -> bool {
        matches!(self, Arm::InfoTime | Arm::Cdam)
    }

    pub fn tam(self) -> bool {
        matches!(self, Arm::Tam | Arm::InfoTime)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Original => "original",
            Arm::Tam => "tam",
            Arm::InfoTime => "infotime",
            Arm::Cdam => "cdam",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" => Ok(Arm::Original),
            "tam" | "+tam" => Ok(Arm::Tam),
            "infotime" | "+infotime" => Ok(Arm::InfoTime),
            "cdam" | "+cdam" => Ok(Arm::Cdam),
            _ => Err(Error::Config(format!("unknown arm {s:?} (original, tam, infotime, cdam)"))),
        }
    }
}

/// Forecasting network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backbone {
    /// Two-layer per-channel MLP on the raw history. Bottleneck arms switch
    /// to the channel-mixing encoder with the latent head.
    Rmlp,
    /// Encoder plus latent head; mixing per [`TrainConfig::mixing`].
    Mlp,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Rmlp => "rmlp",
            Backbone::Mlp => "mlp",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rmlp" => Ok(Backbone::Rmlp),
            "mlp" => Ok(Backbone::Mlp),
            _ => Err(Error::Config(format!("unknown backbone {s:?} (rmlp, mlp)"))),
        }
    }
}

impl fmt::Display for Mixing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mixing::Channel => "mixing",
            Mixing::Independent => "independent",
        })
    }
}

impl FromStr for Mixing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mixing" | "channel-mixing" => Ok(Mixing::Channel),
            "independent" | "channel-independence" => Ok(Mixing::Independent),
            _ => Err(Error::Config(format!("unknown mode {s:?} (mixing, independent)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate of the posterior's own optimiser.
    pub q_lr: f64,
    pub seed: u64,
    pub patience: usize,
    pub ib: IBConfig,
    pub tam: TamConfig,
    pub arm: Arm,
    pub backbone: Backbone,
    pub mixing: Mixing,
    pub latent: usize,
    pub hidden: usize,
    pub instance_norm: bool,
    /// Forecast channels; empty means all.
    pub targets: Vec<usize>,
    /// Window stride on the train split.
    pub stride: usize,
    /// Train windows drawn per epoch after shuffling; 0 uses all.
    pub train_windows: usize,
    /// Evenly spaced cap on validation/test windows; 0 uses all.
    pub eval_windows: usize,
    pub eval_batch_size: usize,
    /// Record wall time in the log (otherwise 0, keeping logs reproducible).
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            q_lr: 1e-3,
            seed: 0,
            patience: 3,
            ib: IBConfig::default(),
            tam: TamConfig::default(),
            arm: Arm::Original,
            backbone: Backbone::Rmlp,
            mixing: Mixing::Channel,
            latent: 64,
            hidden: 256,
            instance_norm: true,
            targets: Vec::new(),
            stride: 1,
            train_windows: 0,
            eval_windows: 0,
            eval_batch_size: 256,
            timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 || self.stride == 0 {
            return Err(Error::Config("epochs, batch sizes and stride must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.q_lr >= 0.0 && self.lr.is_finite() && self.q_lr.is_finite()) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        self.ib.validate()
    }

    pub fn objective(&self) -> Objective {
        Objective { arm: self.arm, ib: self.ib, tam: self.tam }
    }

    /// Network layout implied by the arm and backbone.
    pub fn model_config(&self, lookback: usize, horizon: usize, channels: usize) -> ModelConfig {
        let bottleneck = self.arm.bottleneck();
        let (head, mixing) = match self.backbone {
            Backbone::Rmlp if !bottleneck => (Head::Rmlp, Mixing::Independent),
            Backbone::Rmlp => (Head::Latent, Mixing::Channel),
            Backbone::Mlp => (Head::Latent, self.mixing),
        };
        ModelConfig {
            latent: self.latent,
            hidden: self.hidden,
            mixing,
            head,
            instance_norm: self.instance_norm,
            bottleneck,
            tam_levels: if self.arm.tam() { self.tam.levels } else { 0 },
            targets: self.targets.clone(),
            ..ModelConfig::new(lookback, horizon, channels)
        }
    }
}

/// splitmix64 over `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_NEGATIVES: u64 = 3;

/// Model, optimisers and data for one fit.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    model: Model,
    adam: Adam,
    q_adam: Option<Adam>,
    train: Windows,
    val: Windows,
    test: Windows,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if cfg.arm.tam() {
            cfg.tam.validate(data.horizon)?;
        }
        let mcfg = cfg.model_config(data.lookback(), data.horizon, data.frame.channels());
        let model = Model::new(mcfg, derive_seed(cfg.seed, STREAM_INIT, 0))?;
        let adam = Adam::new(&model.store, model.main_params(), AdamConfig::with_lr(cfg.lr));
        let q_adam = model
            .has_posterior()
            .then(|| Adam::new(&model.store, model.posterior_params_ids(), AdamConfig::with_lr(cfg.q_lr)));
        let train = data.windows(Segment::Train, cfg.stride)?;
        if train.is_empty() {
            return Err(Error::Config("the train split has no complete window".into()));
        }
        let val = data.windows(Segment::Val, 1)?.thinned(cfg.eval_windows);
        if val.is_empty() {
            return Err(Error::Config("the validation split has no complete window".into()));
        }
        let test = data.windows(Segment::Test, 1)?.thinned(cfg.eval_windows);
        Ok(Self { cfg, data, model, adam, q_adam, train, val, test, epoch: 0 })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over the (shuffled) train windows; returns the mean of the
    /// per-batch breakdowns. Incomplete trailing batches are dropped unless
    /// there is no complete batch at all.
    pub fn train_epoch(&mut self) -> Result<LossBreakdown> {
        Ok(LossBreakdown::mean(&self.train_epoch_batches()?))
    }

    /// Like [`Trainer::train_epoch`] but returns every batch's breakdown.
    pub fn train_epoch_batches(&mut self) -> Result<Vec<LossBreakdown>> {
        let e = self.epoch as u64;
        let mut order = self.train.shuffled(derive_seed(self.cfg.seed, STREAM_SHUFFLE, e));
        if self.cfg.train_windows > 0 {
            order.offsets.truncate(self.cfg.train_windows);
        }
        let bs = self.cfg.batch_size;
        let full = order.len() / bs;
        let chunks: Vec<&[usize]> = if full == 0 {
            vec![&order.offsets[..]]
        } else {
            order.offsets.chunks_exact(bs).collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, STREAM_NEGATIVES, e));
        let mut parts = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.into_iter().enumerate() {
            let batch = WindowBatch::gather(&self.data.frame, chunk, order.lookback, order.horizon, false)?;
            let neg = self.model.has_posterior().then(|| sample_negatives(chunk.len(), &mut rng));
            let b = self.train_step(&batch.x, &batch.y, neg.as_deref()).map_err(|err| diverged(err, i))?;
            parts.push(b);
        }
        self.epoch += 1;
        Ok(parts)
    }

    fn train_step(&mut self, x: &Tensor, y: &Tensor, neg: Option<&[usize]>) -> Result<LossBreakdown> {
        let obj = self.cfg.objective();
        let mut tape = Tape::new();
        let head = objective::record_likelihoods(&mut tape, &self.model, x, y, &obj, Bind::Trainable)?;
        if let (Some(q_adam), Some(q), Some(z)) = (self.q_adam.as_mut(), self.model.posterior_net(), head.forward.z) {
            // q is fitted to the current latents before it scores them.
            let z = tape.value(z).clone();
            let input = masked_history(&head.forward.x, &self.model.config.target_channels())?;
            posterior_fit_step(&mut self.model.store, &q, &z, &input, q_adam)?;
        }
        let vars = objective::finish_objective(&mut tape, &self.model, head, &obj, neg, Bind::Trainable)?;
        let breakdown = vars.breakdown(&tape);
        objective::check_terms(&breakdown)?;
        self.model.store.zero_grad();
        tape.backward(vars.total, &mut self.model.store)?;
        self.adam.step(&mut self.model.store)?;
        Ok(breakdown)
    }

    pub fn evaluate(&self, seg: Segment) -> Result<Option<Metrics>> {
        let windows = match seg {
            Segment::Train => &self.train,
            Segment::Val => &self.val,
            Segment::Test => &self.test,
        };
        if windows.is_empty() {
            return Ok(None);
        }
        evaluate_windows(&self.model, &self.cfg.tam, self.data, windows, self.cfg.eval_batch_size).map(Some)
    }
}

fn diverged(err: Error, batch: usize) -> Error {
    match err {
        Error::NonFinite { op } => Error::Diverged { batch, term: op.to_string() },
        Error::Contract(msg) if msg.contains("not finite") => Error::Diverged { batch, term: msg },
        other => other,
    }
}

/// Final forecast `[R, P]` for target rows: the blended forecast when the
/// model has adjacent predictors, otherwise the direct one.
pub fn final_forecast(model: &Model, tam: &TamConfig, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, x, Bind::Frozen)?;
    let out = if model.has_adjacent() {
        tam_pass(&mut tape, model, &fwd, None, tam, Bind::Frozen)?.blended
    } else {
        fwd.y_hat
    };
    Ok(tape.value(out).clone())
}

/// MSE/MAE of the final forecast over the target channels of `windows`.
pub fn evaluate_windows(model: &Model, tam: &TamConfig, data: &Dataset, windows: &Windows, batch_size: usize) -> Result<Metrics> {
    let targets = model.config.target_channels();
    let mut acc = ErrorAccumulator::default();
    for batch in windows.batches(&data.frame, batch_size, false) {
        let batch = batch?;
        let pred = final_forecast(model, tam, &batch.x)?;
        acc.add(&pred, &channel_rows(&batch.y, &targets)?)?;
    }
    acc.finish()
}

/// Patience counter on a validation score (lower is better).
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stale,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, stale: 0 }
    }

    pub fn update(&mut self, score: f64) -> Progress {
        if self.best.is_none_or(|b| score < b) {
            self.best = Some(score);
            self.stale = 0;
            Progress::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Progress::Stop
            } else {
                Progress::Stale
            }
        }
    }
}

/// Outcome of [`fit`]: the model holds the best-validation weights.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub log: RunLog,
    pub val: Metrics,
    pub test: Option<Metrics>,
}

impl FitResult {
    pub fn best_epoch(&self) -> usize {
        self.log.best_epoch
    }
}

/// Trains with early stopping on validation MSE and restores the best weights.
pub fn fit(cfg: &TrainConfig, data: &Dataset) -> Result<FitResult> {
    let mut trainer = Trainer::new(cfg.clone(), data)?;
    let mut log = RunLog::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<(ParamStore, Metrics, Option<Metrics>)> = None;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let train = trainer.train_epoch()?;
        let val = trainer.evaluate(Segment::Val)?.expect("validation windows checked at construction");
        let test = trainer.evaluate(Segment::Test)?;
        let seconds = if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 };
        log.push(EpochRow { epoch, train, val, test, seconds })?;
        match stopper.update(val.mse) {
            Progress::Improved => {
                best = Some((trainer.model.store.clone(), val, test));
                log.best_epoch = epoch;
            }
            Progress::Stale => {}
            Progress::Stop => break,
        }
    }
    let (store, val, test) = best.expect("at least one epoch runs");
    let mut model = trainer.into_model();
    model.store.load_values(&store)?;
    Ok(FitResult { model, log, val, test })
}
