use rand::Rng;

use super::layers::{Bind, Linear, Mlp};
use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Tape, Var};

/// Posterior log-variances are clamped to `[-LOGVAR_BOUND, LOGVAR_BOUND]`.
pub const LOGVAR_BOUND: f64 = 10.0;

/// Per-channel history MLP, optionally followed by a cross-channel MLP.
#[derive(Debug, Clone)]
pub struct Encoder {
    time: Mlp,
    mix: Option<Mlp>,
    channels: usize,
    latent: usize,
}

impl Encoder {
    /// `mix_channels = Some(C)` adds the `C·d → h → C·d` mixing stage.
    pub fn new(
        store: &mut ParamStore,
        lookback: usize,
        hidden: usize,
        latent: usize,
        mix_channels: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let time = Mlp::new(store, "encoder.time", &[lookback, hidden, hidden, latent], rng)?;
        let mix = mix_channels
            .map(|c| Mlp::new(store, "encoder.mix", &[c * latent, hidden, c * latent], rng))
            .transpose()?;
        Ok(Self { time, mix, channels: mix_channels.unwrap_or(1), latent })
    }

    pub fn mixes(&self) -> bool {
        self.mix.is_some()
    }

    /// `rows: [n, T] → [n, d]`. With mixing, `rows` must hold whole samples
    /// (all `C` channels each, in channel order).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, rows: Var, mode: Bind) -> Result<Var> {
        let h = self.time.forward(tape, store, rows, mode)?;
        let Some(mix) = &self.mix else {
            return Ok(h);
        };
        let n = tape.shape(h)[0];
        if n % self.channels != 0 {
            return Err(Error::dim("encoder", format!("{n} rows are not whole samples of {} channels", self.channels)));
        }
        let b = n / self.channels;
        let wide = tape.reshape(h, &[b, self.channels * self.latent])?;
        let mixed = mix.forward(tape, store, wide, mode)?;
        tape.reshape(mixed, &[n, self.latent])
    }
}

/// Diagonal Gaussian `q(z | input)`: a shared body and two linear heads.
#[derive(Debug, Clone)]
pub struct Posterior {
    body: Mlp,
    mean: Linear,
    logvar: Linear,
}

impl Posterior {
    /// The log-variance head starts at zero, so `q` starts with unit variance.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        latent: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let body = Mlp::new(store, &format!("{name}.body"), &[input, hidden, hidden, hidden], rng)?;
        let mean = Linear::new(store, &format!("{name}.mean"), hidden, latent, rng)?;
        let logvar = Linear::zeros(store, &format!("{name}.logvar"), hidden, latent)?;
        Ok(Self { body, mean, logvar })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var, mode: Bind) -> Result<(Var, Var)> {
        let h = self.body.forward(tape, store, input, mode)?;
        let h = tape.relu(h)?;
        let mean = self.mean.forward(tape, store, h, mode)?;
        let lv = self.logvar.forward(tape, store, h, mode)?;
        let lv = tape.clamp(lv, -LOGVAR_BOUND, LOGVAR_BOUND)?;
        Ok((mean, lv))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.body.params();
        p.extend(self.mean.params());
        p.extend(self.logvar.params());
        p
    }
}

/// Which neighbour a sub-sequence is used to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `ŷ_j → y_{j-1}`
    Left,
    /// `ŷ_j → y_{j+1}`
    Right,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

/// One history embedding plus a (left, right) predictor pair per level.
#[derive(Debug, Clone)]
pub struct Adjacent {
    embed: Linear,
    levels: Vec<[Mlp; 2]>,
    horizon: usize,
}

impl Adjacent {
    pub fn new(
        store: &mut ParamStore,
        lookback: usize,
        horizon: usize,
        latent: usize,
        hidden: usize,
        levels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let embed = Linear::new(store, "tam.embed", lookback, latent, rng)?;
        let mut nets = Vec::with_capacity(levels);
        for n in 1..=levels {
            let len = horizon >> n;
            let mut pair = Vec::with_capacity(2);
            for dir in [Direction::Left, Direction::Right] {
                pair.push(Mlp::new(store, &format!("tam.l{n}.{}", dir.as_str()), &[len + latent, hidden, len], rng)?);
            }
            let [l, r]: [Mlp; 2] = pair.try_into().expect("two directions");
            nets.push([l, r]);
        }
        Ok(Self { embed, levels: nets, horizon })
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, history: Var, mode: Bind) -> Result<Var> {
        self.embed.forward(tape, store, history, mode)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn predict(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sub: Var,
        embedding: Var,
        level: usize,
        direction: Direction,
        mode: Bind,
    ) -> Result<Var> {
        if level == 0 || level > self.levels.len() {
            return Err(Error::Config(format!("level {level} outside 1..={}", self.levels.len())));
        }
        let want = self.horizon >> level;
        let got = tape.value(sub).last_axis().1;
        if got != want {
            return Err(Error::dim(
                "predict_adjacent",
                format!("level {level} takes sub-sequences of {want}, got {got}"),
            ));
        }
        let net = &self.levels[level - 1][direction as usize];
        let input = tape.concat(&[sub, embedding])?;
        net.forward(tape, store, input, mode)
    }
}
