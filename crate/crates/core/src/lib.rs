//! Online kernel change-point detection with the scan B-statistic.
//!
//! The crate provides
//!
//! * [`kernel`]: RBF and polynomial kernels, median bandwidth heuristic;
//! * [`mmd`]: the unbiased block estimator of MMD²;
//! * [`detector`]: the streaming scan B-statistic with null variance
//!   normalization and a threshold stopping rule;
//! * [`calibration`]: analytic and simulation-based thresholds for a target
//!   average run length;
//! * [`baselines`]: Hotelling's T² and a windowed Gaussian GLR;
//! * [`simgen`]: seeded generators for the benchmark distribution shifts;
//! * [`harness`]: Monte Carlo detection-delay experiments and CSV output.

pub mod baselines;
pub mod calibration;
pub mod detector;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod mmd;
pub mod seed;
pub mod simgen;

pub use error::{Error, Result};

/// One stream observation.
pub type Sample = Vec<f64>;

/// A statistic updated one sample at a time.
///
/// `observe` returns `None` while the statistic is undefined (for example
/// while a window is filling) and the value to compare against a threshold
/// otherwise.
pub trait StreamingStatistic {
    fn observe(&mut self, sample: &[f64]) -> Result<Option<f64>>;
}

impl<S: StreamingStatistic + ?Sized> StreamingStatistic for Box<S> {
    fn observe(&mut self, sample: &[f64]) -> Result<Option<f64>> {
        (**self).observe(sample)
    }
}
