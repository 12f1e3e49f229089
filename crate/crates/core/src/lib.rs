//! Orthogonal quantile regression.
//!
//! Quantile regression networks trained with the pinball or interval-score
//! loss plus a penalty on the statistical dependence between interval
//! length and the coverage event. Intervals built from the true conditional
//! quantiles have length independent of coverage, so the penalty leaves the
//! population solution unchanged while steering finite-sample fits toward
//! better conditional coverage.
//!
//! Module map:
//!
//! - [`nn`]: dense ReLU network, reverse-mode gradients, Adam, checkpoints
//! - [`losses`]: pinball, interval score, smooth coverage, dependence penalties
//! - [`hsic`]: Gaussian-kernel HSIC estimator and permutation null
//! - [`data`]: synthetic two-group generator, oracle quantiles, CSV, splits
//! - [`training`]: the training loop with early stopping
//! - [`conformal`]: split-conformal (CQR) calibration
//! - [`metrics`]: coverage, correlation/HSIC, ΔWSC, ΔILS, ΔNode, aggregation

pub mod conformal;
pub mod data;
pub mod error;
pub mod hsic;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
