//! Experiment configuration file.
//!
//! ```toml
//! out_dir = "results"     # default "results"
//! sweep = false           # true: require a one-axis sweep
//! verbose = false
//!
//! [plan]                  # every key optional; see ExperimentPlan defaults
//! methods = ["scanB", "hotelling", "glr"]
//! cases = ["case1-mean-shift", "case2-partial-cov", "case3-full-cov", "case4-mixture", "case5-laplace"]
//! target_arl = 500.0
//! block_sizes = [20]
//! n_blocks = [5]
//! kernels = ["gaussian-rbf"]
//! sigma_multipliers = [1.0]
//! subsampling = ["structured"]
//! reblock_policy = "fixed-at-init"
//! replications = 100
//! edd_cap = 50
//! base_seed = 20190401
//! reference_pool_size = 1000
//! variance_tuples = 10000
//! calibration_reps = 200
//! ```
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use scanb::harness::ExperimentPlan;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub sweep: bool,
    pub verbose: bool,
    pub plan: ExperimentPlan,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("results"),
            sweep: false,
            verbose: false,
            plan: ExperimentPlan::default(),
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Read(PathBuf, std::io::Error),
    Parse(PathBuf, toml::de::Error),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(p, e) => write!(f, "{}: {e}", p.display()),
            ConfigError::Parse(p, e) => write!(f, "{}: {}", p.display(), e.message()),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e))
    }
}
