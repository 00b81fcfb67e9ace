//! Python bindings: configuration, data frames, training, forecasting and
//! the metric and estimator helpers.
//!
//! Arrays cross the boundary as nested lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use infotime::cdam;
use infotime::config::RunConfig;
use infotime::data::{generate_synthetic, load_csv, Dataset, SeriesFrame};
use infotime::eval::{self, run_synthetic_experiment, SyntheticExperiment};
use infotime::models::{rows_to_series, Model};
use infotime::numcore::Tensor;
use infotime::tam::{self, TamConfig};
use infotime::train::{self, FitResult};
use infotime::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn tensor3(x: Vec<Vec<Vec<f64>>>) -> PyResult<Tensor> {
    let b = x.len();
    let t = x.first().map_or(0, Vec::len);
    let c = x.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let mut data = Vec::with_capacity(b * t * c);
    for sample in &x {
        if sample.len() != t {
            return Err(PyValueError::new_err("ragged time axis"));
        }
        for row in sample {
            if row.len() != c {
                return Err(PyValueError::new_err("ragged channel axis"));
            }
            data.extend_from_slice(row);
        }
    }
    Tensor::new(vec![b, t, c], data).map_err(py_err)
}

fn nested3(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let [_, n, c] = *t.shape() else { unreachable!("rank checked by caller") };
    t.data().chunks(n * c).map(|s| s.chunks(c).map(<[f64]>::to_vec).collect()).collect()
}

/// Run configuration with the same keys as the command-line config file.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => RunConfig::from_text(t).map_err(py_err)?,
            None => RunConfig::default(),
        };
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner.get(key).ok_or_else(|| PyValueError::new_err(format!("unknown key {key:?}")))
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    /// Loads the configured CSV, or generates the synthetic frame.
    fn frame(&self) -> PyResult<PyFrame> {
        let inner = if self.inner.is_synthetic() {
            generate_synthetic(&self.inner.synth)
        } else {
            load_csv(&PathBuf::from(&self.inner.dataset))
        }
        .map_err(py_err)?;
        Ok(PyFrame { inner })
    }
}

/// A multivariate series, rows by channels.
#[pyclass(name = "Frame", skip_from_py_object)]
#[derive(Clone)]
struct PyFrame {
    inner: SeriesFrame,
}

#[pymethods]
impl PyFrame {
    #[new]
    fn new(rows: Vec<Vec<f64>>, names: Vec<String>) -> PyResult<Self> {
        let c = names.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(PyValueError::new_err("every row needs one value per name"));
        }
        let inner = SeriesFrame::new(rows.concat(), names, None).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_csv(&path).map_err(py_err)? })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.channel_names().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|r| self.inner.row(r).to_vec()).collect()
    }

    fn to_csv(&self) -> String {
        String::from_utf8_lossy(&self.inner.to_csv_bytes()).into_owned()
    }
}

/// A trained model with its run log and best-epoch metrics.
#[pyclass(name = "FitResult")]
struct PyFit {
    inner: FitResult,
    tam: TamConfig,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn best_epoch(&self) -> usize {
        self.inner.best_epoch()
    }

    #[getter]
    fn val_mse(&self) -> f64 {
        self.inner.val.mse
    }

    #[getter]
    fn test_mse(&self) -> Option<f64> {
        self.inner.test.map(|m| m.mse)
    }

    #[getter]
    fn test_mae(&self) -> Option<f64> {
        self.inner.test.map(|m| m.mae)
    }

    fn runlog_csv(&self) -> String {
        self.inner.log.to_csv()
    }

    /// Final forecast `[B][P][targets]` for standardized histories `[B][T][C]`.
    fn predict(&self, x: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let x = tensor3(x)?;
        let model: &Model = &self.inner.model;
        let rows = train::final_forecast(model, &self.tam, &x).map_err(py_err)?;
        let series = rows_to_series(&rows, x.shape()[0]).map_err(py_err)?;
        Ok(nested3(&series))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.model.save(&path).map_err(py_err)
    }
}

/// Trains on `frame` with the settings of `config` (lookback, horizon,
/// split, targets and every training key).
#[pyfunction]
fn fit(py: Python<'_>, config: &PyConfig, frame: &PyFrame) -> PyResult<PyFit> {
    let cfg = &config.inner;
    let data = Dataset::prepare(&frame.inner, cfg.split, cfg.lookback, cfg.horizon).map_err(py_err)?;
    let tcfg = train::TrainConfig { targets: cfg.resolve_targets(&frame.inner).map_err(py_err)?, ..cfg.train.clone() };
    let inner = py.detach(|| train::fit(&tcfg, &data)).map_err(py_err)?;
    Ok(PyFit { inner, tam: tcfg.tam })
}

/// Standardized copy of `frame` using statistics of its train split, plus
/// the `(mean, std)` per channel.
#[pyfunction]
fn standardize(config: &PyConfig, frame: &PyFrame) -> PyResult<(PyFrame, Vec<f64>, Vec<f64>)> {
    let cfg = &config.inner;
    let data = Dataset::prepare(&frame.inner, cfg.split, cfg.lookback, cfg.horizon).map_err(py_err)?;
    Ok((PyFrame { inner: data.frame }, data.stats.mean, data.stats.std))
}

/// Runs the synthetic noise experiment and returns its `(arm, sigma_test,
/// mse, ratio)` CSV.
#[pyfunction]
fn synthetic_experiment(py: Python<'_>, config: &PyConfig) -> PyResult<String> {
    let cfg = &config.inner;
    let exp = SyntheticExperiment {
        spec: cfg.synth.clone(),
        sigma_train: cfg.synth.sigma_train,
        sigma_test: cfg.sigma_grid.clone(),
        lookback: cfg.lookback,
        horizon: cfg.horizon,
        base: cfg.train.clone(),
        seeds: cfg.seeds.clone(),
        jobs: cfg.jobs,
        save_dir: None,
    };
    let report = py.detach(|| run_synthetic_experiment(&exp)).map_err(py_err)?;
    Ok(report.to_csv())
}

#[pyfunction]
fn mse(y_hat: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    let (a, b) = (Tensor::new(vec![y_hat.len()], y_hat), Tensor::new(vec![y.len()], y));
    eval::mse(&a.map_err(py_err)?, &b.map_err(py_err)?).map_err(py_err)
}

#[pyfunction]
fn mae(y_hat: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    let (a, b) = (Tensor::new(vec![y_hat.len()], y_hat), Tensor::new(vec![y.len()], y));
    eval::mae(&a.map_err(py_err)?, &b.map_err(py_err)?).map_err(py_err)
}

/// Sampled vCLUB from positive and negative conditional log-densities.
#[pyfunction]
fn vclub(pos: Vec<f64>, neg: Vec<f64>) -> PyResult<f64> {
    cdam::vclub_from_log_densities(&pos, &neg).map_err(py_err)
}

/// Strided split of `series [B][P][C]` into `2^level` sub-sequences.
#[pyfunction]
fn downsample(series: Vec<Vec<Vec<f64>>>, level: usize) -> PyResult<Vec<Vec<Vec<Vec<f64>>>>> {
    let set = tam::downsample(&tensor3(series)?, level).map_err(py_err)?;
    Ok(set.subs.iter().map(nested3).collect())
}

/// Inverse of [`downsample`].
#[pyfunction]
fn interleave(subs: Vec<Vec<Vec<Vec<f64>>>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let m = subs.len();
    if !m.is_power_of_two() || m < 2 {
        return Err(PyValueError::new_err("need 2^n sub-sequences with n >= 1"));
    }
    let subs = subs.into_iter().map(tensor3).collect::<PyResult<Vec<_>>>()?;
    let set = tam::SubSequenceSet { level: m.trailing_zeros() as usize, subs };
    Ok(nested3(&tam::inverse_interleave(&set).map_err(py_err)?))
}

#[pymodule]
fn infotime_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyFrame>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(vclub, m)?)?;
    m.add_function(wrap_pyfunction!(downsample, m)?)?;
    m.add_function(wrap_pyfunction!(interleave, m)?)?;
    Ok(())
}
