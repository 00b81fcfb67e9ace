//! Forecasting toolkit for multivariate time series with a cross-variable
//! information-bottleneck loss and a multi-resolution temporal loss.
//!
//! Modules, bottom-up:
//!
//! * [`numcore`] dense tensors, reverse-mode tape, Adam, checkpoints
//! * [`data`] CSV ingestion, splits, normalization, windows, synthetic data
//! * [`models`] MLP encoder/forecaster/decoder/posterior/adjacent predictors
//! * [`cdam`] reconstruction + prediction likelihoods and the sampled vCLUB bound
//! * [`tam`] strided downsampling, adjacent-sub-sequence losses, splicing, blending
//! * [`train`] the optimisation loop with early stopping
//! * [`eval`] metrics, ablations, sweeps, the synthetic noise experiment
//! * [`config`] the flat `key = value` run configuration
//! * [`cli`] the `infotime` command

pub mod cdam;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod models;
pub mod numcore;
pub mod tam;
pub mod train;

pub use error::{Error, Result};
