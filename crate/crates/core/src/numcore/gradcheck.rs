//! Central finite-difference verification of tape gradients.

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Per-element error `|a - n| / max(1e-8, |a|)`, maximised over all elements.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> (f64, Option<(usize, usize)>) {
    let mut worst = (0.0, None);
    for (p, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (i, (&av, &nv)) in a.iter().zip(n).enumerate() {
            let err = (av - nv).abs() / av.abs().max(1e-8);
            if err > worst.0 || worst.1.is_none() {
                worst = (err, Some((p, i)));
            }
        }
    }
    worst
}

fn evaluate<F>(store: &ParamStore, f: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    Ok(tape.scalar(loss))
}

/// Analytic gradients of `f` for `params`, computed from a fresh tape.
/// Existing gradient buffers are zeroed first.
pub fn analytic_gradient<F>(store: &mut ParamStore, params: &[ParamId], f: &mut F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    tape.backward(loss, store)?;
    let grads = params
        .iter()
        .map(|&id| store.get(id).grad.clone().unwrap_or_default())
        .collect();
    store.zero_grad();
    Ok(grads)
}

/// `(f(p + h) - f(p - h)) / 2h` for every element of `params`.
pub fn numeric_gradient<F>(store: &mut ParamStore, params: &[ParamId], h: f64, f: &mut F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut out = Vec::with_capacity(params.len());
    for &id in params {
        let n = store.get(id).numel();
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let plus = evaluate(store, f);
            store.get_mut(id).data_mut()[i] = orig - h;
            let minus = evaluate(store, f);
            store.get_mut(id).data_mut()[i] = orig;
            g.push((plus? - minus?) / (2.0 * h));
        }
        out.push(g);
    }
    Ok(out)
}

/// Compares tape gradients of the scalar `f` against central differences.
///
/// `f` must be deterministic: it is evaluated twice at the unperturbed
/// point and any difference is reported as a contract error.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], h: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let first = evaluate(store, &mut f)?;
    let second = evaluate(store, &mut f)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Contract(format!(
            "function under check is not deterministic ({first} vs {second})"
        )));
    }
    let analytic = analytic_gradient(store, params, &mut f)?;
    let numeric = numeric_gradient(store, params, h, &mut f)?;
    let (max_rel_error, at) = max_relative_error(&analytic, &numeric);
    Ok(GradCheck {
        max_rel_error,
        worst: at.map(|(p, i)| (store.name(params[p]).to_string(), i)),
        checked: analytic.iter().map(Vec::len).sum(),
    })
}
