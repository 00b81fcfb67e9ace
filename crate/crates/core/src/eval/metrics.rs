use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Mean squared error over all elements.
pub fn mse(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    let mut acc = ErrorAccumulator::default();
    acc.add(y_hat, y)?;
    acc.finish().map(|m| m.mse)
}

/// Mean absolute error over all elements.
pub fn mae(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    let mut acc = ErrorAccumulator::default();
    acc.add(y_hat, y)?;
    acc.finish().map(|m| m.mae)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Running sums of squared and absolute errors, added in call order.
#[derive(Debug, Clone, Default)]
pub struct ErrorAccumulator {
    sq: f64,
    abs: f64,
    count: usize,
}

impl ErrorAccumulator {
    pub fn add(&mut self, y_hat: &Tensor, y: &Tensor) -> Result<()> {
        if y_hat.shape() != y.shape() {
            return Err(Error::dim("metrics", format!("{:?} vs {:?}", y_hat.shape(), y.shape())));
        }
        self.add_slices(y_hat.data(), y.data());
        Ok(())
    }

    pub(crate) fn add_slices(&mut self, y_hat: &[f64], y: &[f64]) {
        for (a, b) in y_hat.iter().zip(y) {
            let d = a - b;
            self.sq += d * d;
            self.abs += d.abs();
        }
        self.count += y.len();
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(Error::dim("metrics", "no elements"));
        }
        let n = self.count as f64;
        Ok(Metrics { mse: self.sq / n, mae: self.abs / n })
    }
}
