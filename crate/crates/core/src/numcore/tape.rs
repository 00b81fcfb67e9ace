//! Define-by-run tape for reverse-mode differentiation.
//!
//! A fresh [`Tape`] is built for every forward pass. Nodes are appended in
//! evaluation order, so recording order is already a topological order and
//! [`Tape::backward`] simply walks the node list in reverse.

use std::f64::consts::PI;

use super::kernels;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    GatherCols(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    GaussianLogDensity(Var, Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBias(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Square(a)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::GatherCols(a, _)
            | Op::GatherRows(a, _)
            | Op::Reshape(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::GaussianLogDensity(x, m, l) => vec![*x, *m, *l],
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = match &op {
            Op::Leaf(p) => p.is_some(),
            other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        let mut value = value;
        value.requires_grad = false;
        value.grad = None;
        self.push("constant", value, Op::Leaf(None))
    }

    /// Records a parameter; [`Tape::backward`] accumulates into its gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let src = store.get(id);
        let value = Tensor::new(src.shape().to_vec(), src.data().to_vec())?;
        self.push("param", value, Op::Leaf(Some(id)))
    }

    /// Records a parameter's current value as a constant (frozen weights).
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let src = store.get(id);
        self.constant(Tensor::new(src.shape().to_vec(), src.data().to_vec())?)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let va = self.value(a);
        Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b))
    }

    /// Adds a length-`n` bias to every row of a `[rows, n]` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.value(a).last_axis();
        if self.value(bias).numel() != n {
            return Err(Error::dim(
                "add_bias",
                format!("bias of {} values for rows of {n}", self.value(bias).numel()),
            ));
        }
        let va = self.value(a);
        let vb = self.value(bias).data();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            row.iter_mut().zip(vb).for_each(|(x, b)| *x += b);
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push("add_bias", t, Op::AddBias(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.map(a, |x| x * s)?;
        self.push("scale", t, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.map(a, |x| x + s)?;
        self.push("add_scalar", t, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| x.max(0.0))?;
        self.push("relu", t, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| x * x)?;
        self.push("square", t, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let t = self.map(a, |x| x.clamp(lo, hi))?;
        self.push("clamp", t, Op::Clamp(a, lo, hi))
    }

    /// Concatenates `[rows, c_i]` tensors along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let rows = self.value(first).last_axis().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).last_axis();
            if r != rows || self.value(p).rank() != self.value(first).rank() {
                return Err(Error::dim("concat", format!("{:?}", self.shape(p))));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = self.shape(first).to_vec();
        *shape.last_mut().unwrap() = total;
        let t = Tensor::new(shape, data)?;
        self.push("concat", t, Op::Concat(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::dim("mean", "empty tensor"));
        }
        let s: f64 = self.value(a).data().iter().sum();
        self.push("mean", Tensor::scalar(s / n as f64), Op::Mean(a))
    }

    /// Picks columns (last-axis positions) in the given order.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(a).last_axis();
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(Error::dim("gather_cols", format!("index {bad} out of {cols}")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            data.extend(idx.iter().map(|&i| row[i]));
        }
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = idx.len();
        let t = Tensor::new(shape, data)?;
        self.push("gather_cols", t, Op::GatherCols(a, idx.to_vec()))
    }

    /// Contiguous column range `[start, start + len)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather_cols(a, &idx)
    }

    /// Picks rows of a rank-2 tensor; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(a).dims2("gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::dim("gather_rows", format!("row {bad} out of {rows}")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::new(vec![idx.len(), cols], data)?;
        self.push("gather_rows", t, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        self.push("reshape", t, Op::Reshape(a))
    }

    /// Elementwise `-0.5 * ((x - mean)^2 * exp(-logvar) + logvar + ln 2π)`.
    ///
    /// `mean` and `logvar` either match `x` in shape or hold a single value.
    pub fn gaussian_log_density(&mut self, x: Var, mean: Var, logvar: Var) -> Result<Var> {
        let n = self.value(x).numel();
        for v in [mean, logvar] {
            let k = self.value(v).numel();
            if k != 1 && self.shape(v) != self.shape(x) {
                return Err(Error::dim(
                    "gaussian_log_density",
                    format!("{:?} does not broadcast to {:?}", self.shape(v), self.shape(x)),
                ));
            }
        }
        let (vx, vm, vl) = (self.value(x), self.value(mean), self.value(logvar));
        let at = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
        let ln2pi = (2.0 * PI).ln();
        let data = (0..n)
            .map(|i| {
                let d = vx.data()[i] - at(vm, i);
                let lv = at(vl, i);
                -0.5 * (d * d * (-lv).exp() + lv + ln2pi)
            })
            .collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        self.push("gaussian_log_density", t, Op::GaussianLogDensity(x, mean, logvar))
    }

    /// `x · w + b` for `x: [rows, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// Reverse sweep from a scalar `loss`, accumulating into parameter
    /// gradients held by `store`. Gradients add onto whatever the store
    /// already holds; call [`ParamStore::zero_grad`] to reset.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf(None) => {}
                Op::Leaf(Some(id)) => {
                    let t = store.get_mut(*id);
                    let buf = t.grad.as_mut().ok_or_else(|| {
                        Error::Contract("parameter without gradient slot".into())
                    })?;
                    buf.iter_mut().zip(&g).for_each(|(b, x)| *b += x);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2("matmul")?;
                    let n = self.value(*b).shape()[1];
                    if self.nodes[a.0].needs_grad {
                        let da = kernels::matmul_nt(&g, self.value(*b).data(), m, n, k);
                        accumulate(&mut adj, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = kernels::matmul_tn(self.value(*a).data(), &g, m, k, n);
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::AddBias(a, b) => {
                    let n = self.value(*b).numel();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                    accumulate(&mut adj, *b, db);
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.iter().map(|x| -x).collect());
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    accumulate(&mut adj, *a, g.iter().zip(vb).map(|(x, y)| x * y).collect());
                    accumulate(&mut adj, *b, g.iter().zip(va).map(|(x, y)| x * y).collect());
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.iter().map(|x| x * s).collect()),
                Op::AddScalar(a) | Op::Reshape(a) => accumulate(&mut adj, *a, g),
                Op::Relu(a) => {
                    let va = self.value(*a).data();
                    let d = g.iter().zip(va).map(|(x, &v)| if v > 0.0 { *x } else { 0.0 }).collect();
                    accumulate(&mut adj, *a, d);
                }
                Op::Square(a) => {
                    let va = self.value(*a).data();
                    accumulate(&mut adj, *a, g.iter().zip(va).map(|(x, v)| 2.0 * v * x).collect());
                }
                Op::Clamp(a, lo, hi) => {
                    let va = self.value(*a).data();
                    let d = g
                        .iter()
                        .zip(va)
                        .map(|(x, &v)| if v > *lo && v < *hi { *x } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, d);
                }
                Op::Concat(parts) => {
                    let total = node.value.last_axis().1;
                    let rows = node.value.last_axis().0;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).last_axis().1;
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(&mut adj, p, d);
                        offset += w;
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    accumulate(&mut adj, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    accumulate(&mut adj, *a, vec![g[0] / n as f64; n]);
                }
                Op::GatherCols(a, idx) => {
                    let (rows, cols) = self.value(*a).last_axis();
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for (j, &c) in idx.iter().enumerate() {
                            d[r * cols + c] += g[r * idx.len() + j];
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::GatherRows(a, idx) => {
                    let (rows, cols) = self.value(*a).dims2("gather_rows")?;
                    let mut d = vec![0.0; rows * cols];
                    for (i, &src) in idx.iter().enumerate() {
                        let from = &g[i * cols..(i + 1) * cols];
                        d[src * cols..(src + 1) * cols]
                            .iter_mut()
                            .zip(from)
                            .for_each(|(x, y)| *x += y);
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::GaussianLogDensity(x, mean, logvar) => {
                    let (vx, vm, vl) = (self.value(*x), self.value(*mean), self.value(*logvar));
                    let at = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
                    let n = vx.numel();
                    let mut dx = vec![0.0; n];
                    let mut dm = vec![0.0; vm.numel()];
                    let mut dl = vec![0.0; vl.numel()];
                    for i in 0..n {
                        let d = vx.data()[i] - at(vm, i);
                        let inv = (-at(vl, i)).exp();
                        dx[i] = -d * inv * g[i];
                        let mi = if vm.numel() == 1 { 0 } else { i };
                        dm[mi] += d * inv * g[i];
                        let li = if vl.numel() == 1 { 0 } else { i };
                        dl[li] += (0.5 * d * d * inv - 0.5) * g[i];
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *mean, dm);
                    accumulate(&mut adj, *logvar, dl);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, x)| *a += x),
        slot @ None => *slot = Some(d),
    }
}
