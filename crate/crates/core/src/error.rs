use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the detector, calibration and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments: dimension mismatches, out-of-range parameters.
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration that cannot be realized (pool too small, bad grid).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Data that makes an estimate undefined (zero spread, singular covariance).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A numerical procedure failed to produce a usable value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Simulation-based threshold search did not converge.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// A CSV row that is not a list of decimal numbers.
    #[error("{path}: row {row}: {message}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_same_dim(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}
