use rand::Rng;

use crate::error::Result;
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};

/// How parameters enter a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bind {
    /// Gradients flow into the parameter store.
    Trainable,
    /// Current values are recorded as constants.
    Frozen,
}

pub(crate) fn bind(tape: &mut Tape, store: &ParamStore, id: ParamId, mode: Bind) -> Result<Var> {
    match mode {
        Bind::Trainable => tape.param(store, id),
        Bind::Frozen => tape.frozen(store, id),
    }
}

/// `y = x · w + b` with `w: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and bias drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.uniform(format!("{name}.w"), &[fan_in, fan_out], bound, rng)?;
        let b = store.uniform(format!("{name}.b"), &[fan_out], bound, rng)?;
        Ok(Self { w, b, fan_in, fan_out })
    }

    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let w = store.insert(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]))?;
        let b = store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(Self { w, b, fan_in, fan_out })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Bind) -> Result<Var> {
        let w = bind(tape, store, self.w, mode)?;
        let b = bind(tape, store, self.b, mode)?;
        tape.linear(x, w, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, h1, …, out]`; layers are named `{name}.{k}`.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, &format!("{name}.{k}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Bind) -> Result<Var> {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h, mode)?;
            if k + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}
