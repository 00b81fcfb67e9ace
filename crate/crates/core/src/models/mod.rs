//! The parameterised networks.
//!
//! Internally every network works on "channel rows": a batch `x: [B, T, C]`
//! becomes a `[B·C, T]` matrix whose row `b·C + c` is the history of channel
//! `c` in sample `b`. Latents are `[rows, d]`, forecasts `[rows, P]`.
//!
//! Parameter names are stable and double as checkpoint keys:
//!
//! | prefix              | network                                   |
//! |---------------------|-------------------------------------------|
//! | `encoder.time.k`    | per-channel history MLP `T→h→h→d`         |
//! | `encoder.mix.k`     | cross-channel MLP `C·d→h→C·d`             |
//! | `forecaster.k`      | `concat(x_i, z_i)` head `T+d→h→P`         |
//! | `rmlp.k`            | linear baseline head `T→h→P`              |
//! | `decoder.k`         | reconstruction `d→h→T`                    |
//! | `posterior.*`       | the variational `q(z_i | x_o)`            |
//! | `tam.embed`         | history embedding `T→d`                   |
//! | `tam.l{n}.{dir}.k`  | adjacent predictors `L+d→h→L`             |

mod layers;
mod networks;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use layers::{Bind, Linear, Mlp};
pub use networks::{Adjacent, Direction, Encoder, Posterior, LOGVAR_BOUND};

use crate::data::{instance_normalize, InstanceStats};
use crate::error::{Error, Result};
use crate::numcore::{checkpoint, ParamId, ParamStore, Tape, Tensor, Var};

/// Whether latents of one channel may read other channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    Channel,
    Independent,
}

/// Forecast head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Two linear layers straight from the history.
    Rmlp,
    /// Latent-conditioned head over `concat(x_i, z_i)`.
    Latent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub latent: usize,
    pub hidden: usize,
    pub mixing: Mixing,
    pub head: Head,
    pub instance_norm: bool,
    /// Builds the reconstruction decoder and the posterior.
    pub bottleneck: bool,
    /// Downsampling levels with adjacent predictors; 0 disables them.
    pub tam_levels: usize,
    /// Channels that are forecast and scored; empty means all.
    pub targets: Vec<usize>,
}

impl ModelConfig {
    pub fn new(lookback: usize, horizon: usize, channels: usize) -> Self {
        Self {
            lookback,
            horizon,
            channels,
            latent: 64,
            hidden: 256,
            mixing: Mixing::Channel,
            head: Head::Latent,
            instance_norm: false,
            bottleneck: false,
            tam_levels: 0,
            targets: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.lookback, self.horizon, self.channels, self.latent, self.hidden];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must all be at least 1".into()));
        }
        if self.tam_levels > 0 && (self.tam_levels >= usize::BITS as usize || self.horizon % (1 << self.tam_levels) != 0) {
            return Err(Error::Config(format!(
                "horizon {} is not divisible by 2^{}",
                self.horizon, self.tam_levels
            )));
        }
        if self.bottleneck && self.head == Head::Rmlp {
            return Err(Error::Config("the bottleneck needs the latent head".into()));
        }
        if self.instance_norm && self.lookback < 2 {
            return Err(Error::Config("instance normalisation needs lookback >= 2".into()));
        }
        if let Some(&bad) = self.targets.iter().find(|&&c| c >= self.channels) {
            return Err(Error::Config(format!("target channel {bad} out of {}", self.channels)));
        }
        Ok(())
    }

    /// Target channel indices (all channels when none are listed).
    pub fn target_channels(&self) -> Vec<usize> {
        if self.targets.is_empty() {
            (0..self.channels).collect()
        } else {
            self.targets.clone()
        }
    }
}

/// Latents `z: [B, C, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: Tensor,
}

/// Diagonal Gaussian with `logvar` clamped to `±LOGVAR_BOUND`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Tensor,
    pub logvar: Tensor,
}

/// Rows `b·k + j` = series of `channels[j]` in sample `b`, for `x: [B, L, C]`.
pub fn channel_rows(x: &Tensor, channels: &[usize]) -> Result<Tensor> {
    let [b, l, c] = *x.shape() else {
        return Err(Error::dim("channel_rows", format!("expected [B, L, C], got {:?}", x.shape())));
    };
    if let Some(&bad) = channels.iter().find(|&&ch| ch >= c) {
        return Err(Error::dim("channel_rows", format!("channel {bad} out of {c}")));
    }
    let d = x.data();
    let mut out = Vec::with_capacity(b * channels.len() * l);
    for bi in 0..b {
        for &ch in channels {
            out.extend((0..l).map(|t| d[(bi * l + t) * c + ch]));
        }
    }
    Tensor::new(vec![b * channels.len(), l], out)
}

/// Inverse of [`channel_rows`]: `[B·k, L]` back to `[B, L, k]`.
pub fn rows_to_series(rows: &Tensor, batch: usize) -> Result<Tensor> {
    let (r, l) = rows.dims2("rows_to_series")?;
    if batch == 0 || r % batch != 0 {
        return Err(Error::dim("rows_to_series", format!("{r} rows for batch {batch}")));
    }
    let k = r / batch;
    let d = rows.data();
    let mut out = vec![0.0; r * l];
    for bi in 0..batch {
        for j in 0..k {
            for t in 0..l {
                out[(bi * l + t) * k + j] = d[(bi * k + j) * l + t];
            }
        }
    }
    Tensor::new(vec![batch, l, k], out)
}

/// Posterior inputs for the rows of `channels`: the sample's whole history
/// with channel `i` zeroed, flattened `[T·C]`, followed by a one-hot of `i`.
pub fn masked_history(x: &Tensor, channels: &[usize]) -> Result<Tensor> {
    let [b, t, c] = *x.shape() else {
        return Err(Error::dim("masked_history", format!("expected [B, T, C], got {:?}", x.shape())));
    };
    let width = t * c + c;
    let mut out = Vec::with_capacity(b * channels.len() * width);
    for bi in 0..b {
        let sample = &x.data()[bi * t * c..(bi + 1) * t * c];
        for &i in channels {
            if i >= c {
                return Err(Error::dim("masked_history", format!("channel {i} out of {c}")));
            }
            out.extend(sample.iter().enumerate().map(|(k, &v)| if k % c == i { 0.0 } else { v }));
            out.extend((0..c).map(|k| if k == i { 1.0 } else { 0.0 }));
        }
    }
    Tensor::new(vec![b * channels.len(), width], out)
}

/// Tape values produced by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub batch: usize,
    /// Input after optional instance normalisation, `[B, T, C]`.
    pub x: Tensor,
    pub instance: Option<InstanceStats>,
    /// Target-row histories `[R, T]` in the normalised space.
    pub history: Var,
    /// Target-row latents `[R, d]` (latent head only).
    pub z: Option<Var>,
    /// Direct forecast `[R, P]` in the input's scale.
    pub y_hat: Var,
}

/// A set of networks sharing one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    encoder: Option<Encoder>,
    forecaster: Option<Mlp>,
    rmlp: Option<Mlp>,
    decoder: Option<Mlp>,
    posterior: Option<Posterior>,
    adjacent: Option<Adjacent>,
}

impl Model {
    /// Builds and initialises every network the config asks for; the same
    /// config and seed give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (t, p, c, d, h) = (config.lookback, config.horizon, config.channels, config.latent, config.hidden);
        let mut model = Self {
            encoder: None,
            forecaster: None,
            rmlp: None,
            decoder: None,
            posterior: None,
            adjacent: None,
            config: config.clone(),
            store: ParamStore::new(),
        };
        match config.head {
            Head::Latent => {
                let mix = config.mixing == Mixing::Channel;
                model.encoder = Some(Encoder::new(&mut store, t, h, d, mix.then_some(c), &mut rng)?);
                model.forecaster = Some(Mlp::new(&mut store, "forecaster", &[t + d, h, p], &mut rng)?);
            }
            Head::Rmlp => model.rmlp = Some(Mlp::new(&mut store, "rmlp", &[t, h, p], &mut rng)?),
        }
        if config.bottleneck {
            model.decoder = Some(Mlp::new(&mut store, "decoder", &[d, h, t], &mut rng)?);
            model.posterior = Some(Posterior::new(&mut store, "posterior", t * c + c, h, d, &mut rng)?);
        }
        if config.tam_levels > 0 {
            model.adjacent = Some(Adjacent::new(&mut store, t, p, d, h, config.tam_levels, &mut rng)?);
        }
        model.store = store;
        Ok(model)
    }

    pub fn has_posterior(&self) -> bool {
        self.posterior.is_some()
    }

    pub fn has_adjacent(&self) -> bool {
        self.adjacent.is_some()
    }

    /// Parameters optimised by the main objective (everything but `q`).
    pub fn main_params(&self) -> Vec<ParamId> {
        let q = self.posterior_params_ids();
        self.store.ids().filter(|id| !q.contains(id)).collect()
    }

    /// Handle to the posterior network (parameters stay in [`Model::store`]).
    pub fn posterior_net(&self) -> Option<Posterior> {
        self.posterior.clone()
    }

    pub fn posterior_params_ids(&self) -> Vec<ParamId> {
        self.posterior.as_ref().map(Posterior::params).unwrap_or_default()
    }

    /// Encodes, forecasts and (with instance normalisation) denormalises the
    /// target rows of `x: [B, T, C]`.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, mode: Bind) -> Result<Forward> {
        let cfg = &self.config;
        let [b, t, c] = *x.shape() else {
            return Err(Error::dim("model", format!("expected [B, T, C], got {:?}", x.shape())));
        };
        if t != cfg.lookback || c != cfg.channels {
            return Err(Error::dim(
                "model",
                format!("input [{b}, {t}, {c}] does not match lookback {} and {} channels", cfg.lookback, cfg.channels),
            ));
        }
        if b == 0 {
            return Err(Error::dim("model", "empty batch"));
        }
        let (x, instance) = if cfg.instance_norm {
            let (n, s) = instance_normalize(x)?;
            (n, Some(s))
        } else {
            (x.clone(), None)
        };
        let targets = cfg.target_channels();
        let history = tape.constant(channel_rows(&x, &targets)?)?;

        let (z, y_norm) = match cfg.head {
            Head::Rmlp => {
                let net = self.rmlp.as_ref().expect("rmlp head");
                (None, net.forward(tape, &self.store, history, mode)?)
            }
            Head::Latent => {
                let z = self.target_latents(tape, &x, &targets, history, mode)?;
                let y = self.forecast(tape, history, z, mode)?;
                (Some(z), y)
            }
        };
        let y_hat = match &instance {
            Some(s) => denormalize_rows(tape, y_norm, s, &targets)?,
            None => y_norm,
        };
        Ok(Forward { batch: b, x, instance, history, z, y_hat })
    }

    fn target_latents(&self, tape: &mut Tape, x: &Tensor, targets: &[usize], history: Var, mode: Bind) -> Result<Var> {
        let enc = self.encoder.as_ref().expect("latent head has an encoder");
        if !enc.mixes() {
            return enc.forward(tape, &self.store, history, mode);
        }
        let c = self.config.channels;
        let b = x.shape()[0];
        let all = tape.constant(channel_rows(x, &(0..c).collect::<Vec<_>>())?)?;
        let z = enc.forward(tape, &self.store, all, mode)?;
        if targets.len() == c {
            return Ok(z);
        }
        let idx: Vec<usize> = (0..b).flat_map(|bi| targets.iter().map(move |&t| bi * c + t)).collect();
        tape.gather_rows(z, &idx)
    }

    /// `concat(x_i, z_i) → h → P`.
    pub fn forecast(&self, tape: &mut Tape, history: Var, z: Var, mode: Bind) -> Result<Var> {
        let net = self.forecaster.as_ref().ok_or_else(|| Error::Contract("model has no latent forecaster".into()))?;
        let input = tape.concat(&[history, z])?;
        net.forward(tape, &self.store, input, mode)
    }

    /// `d → h → T`, the mean of the history likelihood.
    pub fn reconstruct(&self, tape: &mut Tape, z: Var, mode: Bind) -> Result<Var> {
        let net = self.decoder.as_ref().ok_or_else(|| Error::Contract("model has no decoder".into()))?;
        net.forward(tape, &self.store, z, mode)
    }

    /// Mean and clamped log-variance of `q(z_i | x_o)` for inputs built by
    /// [`masked_history`].
    pub fn posterior(&self, tape: &mut Tape, input: Var, mode: Bind) -> Result<(Var, Var)> {
        let q = self.posterior.as_ref().ok_or_else(|| Error::Contract("model has no posterior".into()))?;
        q.forward(tape, &self.store, input, mode)
    }

    /// Learned `T → d` embedding of target histories for the adjacent predictors.
    pub fn embed_history(&self, tape: &mut Tape, history: Var, mode: Bind) -> Result<Var> {
        let a = self.adjacent.as_ref().ok_or_else(|| Error::Contract("model has no adjacent predictors".into()))?;
        a.embed(tape, &self.store, history, mode)
    }

    /// Predicts the neighbouring sub-sequence of `sub: [R, P/2^level]`.
    pub fn predict_adjacent(
        &self,
        tape: &mut Tape,
        sub: Var,
        embedding: Var,
        level: usize,
        direction: Direction,
        mode: Bind,
    ) -> Result<Var> {
        let a = self.adjacent.as_ref().ok_or_else(|| Error::Contract("model has no adjacent predictors".into()))?;
        a.predict(tape, &self.store, sub, embedding, level, direction, mode)
    }

    /// `z: [B, C, d]` for every channel of `x: [B, T, C]`.
    pub fn encode_latents(&self, x: &Tensor) -> Result<LatentBatch> {
        let enc = self.encoder.as_ref().ok_or_else(|| Error::Contract("model has no encoder".into()))?;
        let (b, c) = (x.shape().first().copied().unwrap_or(0), self.config.channels);
        if x.shape() != [b, self.config.lookback, c] {
            return Err(Error::dim("encode_latents", format!("input {:?} does not match config", x.shape())));
        }
        let x = if self.config.instance_norm { instance_normalize(x)?.0 } else { x.clone() };
        let mut tape = Tape::new();
        let rows = tape.constant(channel_rows(&x, &(0..c).collect::<Vec<_>>())?)?;
        let z = enc.forward(&mut tape, &self.store, rows, Bind::Frozen)?;
        let z = tape.value(z).clone().reshape(vec![b, c, self.config.latent])?;
        Ok(LatentBatch { z })
    }

    /// Direct forecast `[B, P, k]` for the target channels.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, x, Bind::Frozen)?;
        rows_to_series(tape.value(f.y_hat), f.batch)
    }

    /// `q(z_i | x_o)` for each target channel of `x: [B, T, C]`, rows ordered
    /// `b·k + j`.
    pub fn posterior_params(&self, x: &Tensor) -> Result<GaussianParams> {
        let mut tape = Tape::new();
        let x = if self.config.instance_norm { instance_normalize(x)?.0 } else { x.clone() };
        let input = tape.constant(masked_history(&x, &self.config.target_channels())?)?;
        let (m, lv) = self.posterior(&mut tape, input, Bind::Frozen)?;
        Ok(GaussianParams { mean: tape.value(m).clone(), logvar: tape.value(lv).clone() })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(&self.store, path)
    }

    /// Replaces the weights with a checkpoint written for the same config.
    pub fn load_weights(&mut self, path: &std::path::Path) -> Result<()> {
        let other = checkpoint::load(path)?;
        self.store.load_values(&other)
    }
}

fn denormalize_rows(tape: &mut Tape, y: Var, stats: &InstanceStats, targets: &[usize]) -> Result<Var> {
    let (rows, p) = tape.value(y).dims2("denormalize")?;
    let k = targets.len();
    let mut scale = Vec::with_capacity(rows * p);
    let mut shift = Vec::with_capacity(rows * p);
    for r in 0..rows {
        let at = (r / k) * stats.channels + targets[r % k];
        scale.extend(std::iter::repeat_n(stats.std[at], p));
        shift.extend(std::iter::repeat_n(stats.mean[at], p));
    }
    let scale = tape.constant(Tensor::new(vec![rows, p], scale)?)?;
    let shift = tape.constant(Tensor::new(vec![rows, p], shift)?)?;
    let scaled = tape.mul(y, scale)?;
    tape.add(scaled, shift)
}
