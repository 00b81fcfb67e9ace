use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam with bias correction over a fixed group of parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    params: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, config: AdamConfig) -> Self {
        let m: Vec<Vec<f64>> = params.iter().map(|&id| vec![0.0; store.get(id).numel()]).collect();
        let v = m.clone();
        Self { config, params, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// Applies one update from the gradients currently held by `store`.
    /// Gradients are left in place.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for &id in &self.params {
            if store.get(id).grad.is_none() {
                return Err(Error::Contract(format!(
                    "parameter {:?} has no gradient",
                    store.name(id)
                )));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (k, &id) in self.params.iter().enumerate() {
            let tensor = store.get_mut(id);
            let grad = tensor.grad.take().expect("checked above");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            tensor.grad = Some(grad);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn single(value: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(value)).unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut store, id) = single(0.7);
        let mut adam = Adam::new(&store, vec![id], AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.get(id).data()[0], 0.7);
        assert_eq!(adam.step_count(), 10);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let (mut store, id) = single(0.0);
        store.get_mut(id).grad = Some(vec![1.0]);
        let mut adam = Adam::new(&store, vec![id], AdamConfig::with_lr(0.01));
        adam.step(&mut store).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        assert!((store.get(id).data()[0] + 0.01).abs() < 1e-9);
        assert_eq!(store.get(id).grad.as_deref(), Some(&[1.0][..]));
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let (mut store, id) = single(0.0);
        store.get_mut(id).grad = Some(vec![-3.5]);
        let mut adam = Adam::new(&store, vec![id], AdamConfig::with_lr(0.01));
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..5000 {
            adam.step(&mut store).unwrap();
            let now = store.get(id).data()[0];
            last_delta = now - prev;
            prev = now;
        }
        assert!((last_delta - 0.01).abs() < 1e-6, "{last_delta}");
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let (mut store, id) = single(1.0);
        store.get_mut(id).grad = None;
        let mut adam = Adam::new(&store, vec![id], AdamConfig::default());
        assert!(matches!(adam.step(&mut store), Err(Error::Contract(_))));
    }
}
