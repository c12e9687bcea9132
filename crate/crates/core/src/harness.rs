//! Monte Carlo detection-delay experiments.
//!
//! Every replication of every cell draws its reference pool and stream from
//! seeds derived from `(base_seed, case, replication)` alone, so methods and
//! parameter cells are compared on paired data, and results do not depend on
//! the order or thread in which replications run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_reference, GlrMonitor, HotellingMonitor, Thresholded};
use crate::calibration::{
    calibrate_threshold_by_simulation, threshold_for_arl, ArlQuery, NullRun, NullScenario, SimulationCalibration,
};
use crate::detector::{DetectorConfig, ReblockPolicy, ReferencePool, ScanBDetector, Subsampling};
use crate::error::{Error, Result};
use crate::kernel::{median_bandwidth, KernelFamily, KernelSpec};
use crate::seed::{derive_seed, role};
use crate::simgen::{generate_reference_pool_dim, null_stream, post_change_samples, pre_change_samples, CaseId};
use crate::StreamingStatistic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "scanB")]
    ScanB,
    #[serde(rename = "hotelling")]
    Hotelling,
    #[serde(rename = "glr")]
    Glr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ScanB, Method::Hotelling, Method::Glr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ScanB => "scanB",
            Method::Hotelling => "hotelling",
            Method::Glr => "glr",
        }
    }

    fn index(self) -> u64 {
        match self {
            Method::ScanB => 0,
            Method::Hotelling => 1,
            Method::Glr => 2,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown method {s:?}; expected scanB, hotelling or glr")))
    }
}

/// Everything that defines an experiment. Grid values are this tool's own
/// defaults, not published settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub methods: Vec<Method>,
    pub cases: Vec<CaseId>,
    pub target_arl: f64,
    /// B0 grid.
    pub block_sizes: Vec<usize>,
    /// N grid (scanB only).
    pub n_blocks: Vec<usize>,
    /// Kernel grid (scanB only; RBF families).
    pub kernels: Vec<KernelFamily>,
    /// Bandwidth as a multiple of the pool's median pairwise distance.
    pub sigma_multipliers: Vec<f64>,
    /// Variance-estimation tuple scheme grid (scanB only).
    pub subsampling: Vec<Subsampling>,
    pub reblock_policy: ReblockPolicy,
    pub replications: usize,
    pub edd_cap: usize,
    pub base_seed: u64,
    pub reference_pool_size: usize,
    pub variance_tuples: usize,
    /// Null replications per simulation-calibrated baseline threshold.
    pub calibration_reps: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            cases: CaseId::BENCHMARK.to_vec(),
            target_arl: 500.0,
            block_sizes: vec![20],
            n_blocks: vec![5],
            kernels: vec![KernelFamily::GaussianRbf],
            sigma_multipliers: vec![1.0],
            subsampling: vec![Subsampling::Structured],
            reblock_policy: ReblockPolicy::default(),
            replications: 100,
            edd_cap: 50,
            base_seed: 20_190_401,
            reference_pool_size: 1000,
            variance_tuples: 10_000,
            calibration_reps: 200,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let nonempty = |len: usize, name: &str| {
            if len == 0 {
                Err(Error::Config(format!("{name} must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty(self.methods.len(), "methods")?;
        nonempty(self.cases.len(), "cases")?;
        nonempty(self.block_sizes.len(), "block_sizes")?;
        nonempty(self.n_blocks.len(), "n_blocks")?;
        nonempty(self.kernels.len(), "kernels")?;
        nonempty(self.sigma_multipliers.len(), "sigma_multipliers")?;
        nonempty(self.subsampling.len(), "subsampling")?;
        if self.replications < 1 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.edd_cap < 1 {
            return Err(Error::Config("edd_cap must be >= 1".into()));
        }
        if !(self.target_arl.is_finite() && self.target_arl > 1.0) {
            return Err(Error::Config(format!("target_arl must be > 1, got {}", self.target_arl)));
        }
        if self.cases.contains(&CaseId::NullOnly) {
            return Err(Error::Config("null-only has no change to detect".into()));
        }
        if let Some(&b) = self.block_sizes.iter().find(|&&b| b < 2) {
            return Err(Error::Config(format!("block sizes must be >= 2, got {b}")));
        }
        if let Some(&n) = self.n_blocks.iter().find(|&&n| n < 1) {
            return Err(Error::Config(format!("n_blocks must be >= 1, got {n}")));
        }
        if let Some(k) = self.kernels.iter().find(|k| **k == KernelFamily::Polynomial) {
            return Err(Error::Config(format!("kernel grid supports RBF families only, got {k}")));
        }
        if let Some(m) = self.sigma_multipliers.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::Config(format!("sigma multipliers must be positive, got {m}")));
        }
        if self.methods.iter().any(|&m| m != Method::ScanB) {
            if self.target_arl < 10.0 {
                return Err(Error::Config("simulation calibration needs target_arl >= 10".into()));
            }
            if self.calibration_reps < 1 {
                return Err(Error::Config("calibration_reps must be >= 1".into()));
            }
        }
        let max_b = *self.block_sizes.iter().max().expect("nonempty");
        if self.methods.contains(&Method::ScanB) {
            let max_n = *self.n_blocks.iter().max().expect("nonempty");
            let need = max_n * max_b + 6;
            if self.reference_pool_size < need {
                return Err(Error::Config(format!(
                    "reference_pool_size {} is below N*B0 + 6 = {need}",
                    self.reference_pool_size
                )));
            }
            if self.variance_tuples < 2 {
                return Err(Error::Config("variance_tuples must be >= 2".into()));
            }
        }
        let max_dim = self.cases.iter().map(|c| c.default_dim()).max().expect("nonempty");
        if self.reference_pool_size <= max_dim + 1 {
            return Err(Error::Config(format!(
                "reference_pool_size {} too small for dimension {max_dim}",
                self.reference_pool_size
            )));
        }
        Ok(())
    }

    /// Names of grid axes with more than one entry.
    pub fn varying_axes(&self) -> Vec<&'static str> {
        [
            ("block_sizes", self.block_sizes.len()),
            ("n_blocks", self.n_blocks.len()),
            ("kernels", self.kernels.len()),
            ("sigma_multipliers", self.sigma_multipliers.len()),
            ("subsampling", self.subsampling.len()),
        ]
        .into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(name, _)| name)
        .collect()
    }

    fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &case in &self.cases {
            for &method in &self.methods {
                for &block_size in &self.block_sizes {
                    if method != Method::ScanB {
                        out.push(Cell {
                            method,
                            case,
                            block_size,
                            scan: None,
                        });
                        continue;
                    }
                    for &n_blocks in &self.n_blocks {
                        for &kernel in &self.kernels {
                            for &sigma_multiplier in &self.sigma_multipliers {
                                for &subsampling in &self.subsampling {
                                    out.push(Cell {
                                        method,
                                        case,
                                        block_size,
                                        scan: Some(ScanParams {
                                            n_blocks,
                                            kernel,
                                            sigma_multiplier,
                                            subsampling,
                                        }),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Parameters only the kernel statistic has.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanParams {
    pub n_blocks: usize,
    pub kernel: KernelFamily,
    pub sigma_multiplier: f64,
    pub subsampling: Subsampling,
}

/// One (method, case, parameter) combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub case: CaseId,
    pub block_size: usize,
    /// `None` for the parametric methods.
    pub scan: Option<ScanParams>,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} B0={}", self.method, self.case, self.block_size)?;
        if let Some(s) = &self.scan {
            write!(
                f,
                " N={} {} sigma=x{} {}",
                s.n_blocks, s.kernel, s.sigma_multiplier, s.subsampling.as_str()
            )?;
        }
        Ok(())
    }
}

/// How a statistic is built from a reference pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticSpec {
    pub method: Method,
    pub block_size: usize,
    pub scan: Option<ScanParams>,
    pub reblock_policy: ReblockPolicy,
    pub variance_tuples: usize,
}

/// The three monitored statistics behind one type.
#[derive(Debug)]
pub enum MethodStatistic {
    ScanB(Box<ScanBDetector>),
    Hotelling(HotellingMonitor),
    Glr(GlrMonitor),
}

impl StreamingStatistic for MethodStatistic {
    fn observe(&mut self, sample: &[f64]) -> Result<Option<f64>> {
        match self {
            MethodStatistic::ScanB(d) => d.observe(sample),
            MethodStatistic::Hotelling(m) => m.observe(sample),
            MethodStatistic::Glr(m) => m.observe(sample),
        }
    }
}

impl StatisticSpec {
    /// Build the statistic. The scan detector's threshold is left infinite;
    /// stopping is applied by the caller.
    pub fn build(&self, pool: ReferencePool) -> Result<MethodStatistic> {
        match self.method {
            Method::ScanB => {
                let scan = self
                    .scan
                    .ok_or_else(|| Error::Config("scanB needs kernel parameters".into()))?;
                let sigma = scan.sigma_multiplier * median_bandwidth(pool.samples())?;
                let kernel = KernelSpec::rbf(scan.kernel, sigma)?;
                let mut config = DetectorConfig::new(self.block_size, scan.n_blocks, kernel, f64::INFINITY);
                config.subsampling = scan.subsampling;
                config.variance_tuples = self.variance_tuples;
                config.reblock_policy = self.reblock_policy;
                Ok(MethodStatistic::ScanB(Box::new(ScanBDetector::new(config, pool)?)))
            }
            Method::Hotelling => Ok(MethodStatistic::Hotelling(HotellingMonitor::new(
                fit_reference(pool.samples())?,
                self.block_size,
            )?)),
            Method::Glr => Ok(MethodStatistic::Glr(GlrMonitor::new(
                self.block_size,
                pool.dim(),
                pool.samples(),
            )?)),
        }
    }
}

/// Null replications: a fresh pre-change pool and an endless pre-change
/// stream per replication.
#[derive(Debug, Clone, Copy)]
pub struct NullExperiment {
    pub statistic: StatisticSpec,
    pub dim: usize,
    pub pool_size: usize,
    pub seed: u64,
}

impl NullScenario for NullExperiment {
    type Statistic = MethodStatistic;

    fn replicate(&self, rep: u64) -> Result<NullRun<MethodStatistic>> {
        let pool = generate_reference_pool_dim(
            CaseId::NullOnly,
            self.dim,
            self.pool_size,
            derive_seed(self.seed, &[rep, role::POOL]),
        )?;
        Ok(NullRun {
            statistic: self.statistic.build(pool)?,
            stream: Box::new(null_stream(self.dim, derive_seed(self.seed, &[rep, role::STREAM]))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EddSummary {
    pub replications: usize,
    pub censored: usize,
    pub censoring_fraction: f64,
    /// Location and spread count censored replications as `edd_cap`.
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
}

impl EddSummary {
    pub fn from_delays(delays: &[Option<u32>], edd_cap: usize) -> Self {
        let n = delays.len();
        let mut v: Vec<f64> = delays
            .iter()
            .map(|d| d.map_or(edd_cap as f64, f64::from))
            .collect();
        let censored = delays.iter().filter(|d| d.is_none()).count();
        if n == 0 {
            return Self {
                replications: 0,
                censored: 0,
                censoring_fraction: 0.0,
                median: f64::NAN,
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        v.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Self {
            replications: n,
            censored,
            censoring_fraction: censored as f64 / n as f64,
            median,
            mean,
            sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EddResult {
    pub cell: Cell,
    pub threshold: f64,
    pub edd_cap: usize,
    /// Post-change samples until the alarm, `None` when censored.
    pub delays: Vec<Option<u32>>,
    pub summary: EddSummary,
}

impl EddResult {
    pub fn mean(&self) -> f64 {
        self.summary.mean
    }

    pub fn censoring_fraction(&self) -> f64 {
        self.summary.censoring_fraction
    }
}

fn in_context(e: Error, ctx: &str) -> Error {
    match e {
        Error::Input(m) => Error::Input(format!("{ctx}: {m}")),
        Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
        Error::DegenerateData(m) => Error::DegenerateData(format!("{ctx}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
        Error::Calibration(m) => Error::Calibration(format!("{ctx}: {m}")),
        other => other,
    }
}

impl ExperimentPlan {
    fn statistic_spec(&self, cell: &Cell) -> StatisticSpec {
        StatisticSpec {
            method: cell.method,
            block_size: cell.block_size,
            scan: cell.scan,
            reblock_policy: self.reblock_policy,
            variance_tuples: self.variance_tuples,
        }
    }

    /// Simulation-calibrated threshold for a parametric method.
    fn calibrate_baseline(&self, method: Method, dim: usize, block_size: usize) -> Result<f64> {
        let scenario = NullExperiment {
            statistic: StatisticSpec {
                method,
                block_size,
                scan: None,
                reblock_policy: self.reblock_policy,
                variance_tuples: self.variance_tuples,
            },
            dim,
            pool_size: self.reference_pool_size,
            seed: derive_seed(
                self.base_seed,
                &[role::CALIBRATION, method.index(), dim as u64, block_size as u64],
            ),
        };
        let opts = SimulationCalibration {
            reps: self.calibration_reps,
            ..Default::default()
        };
        calibrate_threshold_by_simulation(&scenario, self.target_arl, opts).map(|c| c.threshold)
    }

    fn threshold(&self, cell: &Cell, cache: &mut BTreeMap<(Method, usize, usize), f64>) -> Result<f64> {
        match cell.method {
            Method::ScanB => threshold_for_arl(ArlQuery {
                target_arl: self.target_arl,
                block_size: cell.block_size,
            }),
            m => {
                let key = (m, cell.case.default_dim(), cell.block_size);
                if let Some(&t) = cache.get(&key) {
                    return Ok(t);
                }
                let t = self.calibrate_baseline(m, key.1, key.2)?;
                cache.insert(key, t);
                Ok(t)
            }
        }
    }

    /// One replication: warm the window with `B0` pre-change samples, then
    /// feed post-change samples until the first alarm or `edd_cap`.
    fn replicate(&self, cell: &Cell, threshold: f64, rep: u64) -> Result<Option<u32>> {
        let dim = cell.case.default_dim();
        let pool_seed = derive_seed(self.base_seed, &[cell.case.index(), rep, role::POOL]);
        let stream_seed = derive_seed(self.base_seed, &[cell.case.index(), rep, role::STREAM]);
        let pool = generate_reference_pool_dim(cell.case, dim, self.reference_pool_size, pool_seed)?;
        let mut monitor = Thresholded::new(self.statistic_spec(cell).build(pool)?, threshold);
        for s in pre_change_samples(cell.case, dim, cell.block_size, stream_seed) {
            monitor.step(&s)?;
        }
        for (k, s) in post_change_samples(cell.case, dim, self.edd_cap, stream_seed)
            .iter()
            .enumerate()
        {
            if monitor.step(s)?.is_alarm() {
                return Ok(Some(k as u32 + 1));
            }
        }
        Ok(None)
    }
}

/// Run every cell of the plan (the full grid product).
pub fn run_edd(plan: &ExperimentPlan) -> Result<Vec<EddResult>> {
    plan.validate()?;
    let mut cache = BTreeMap::new();
    let mut out = Vec::new();
    for cell in plan.cells() {
        let ctx = cell.to_string();
        let threshold = plan.threshold(&cell, &mut cache).map_err(|e| in_context(e, &ctx))?;
        let delays = (0..plan.replications as u64)
            .into_par_iter()
            .map(|rep| plan.replicate(&cell, threshold, rep))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| in_context(e, &ctx))?;
        out.push(EddResult {
            cell,
            threshold,
            edd_cap: plan.edd_cap,
            summary: EddSummary::from_delays(&delays, plan.edd_cap),
            delays,
        });
    }
    Ok(out)
}

/// A one-dimensional sweep: at most one grid axis may have several entries.
pub fn run_sweep(plan: &ExperimentPlan) -> Result<Vec<EddResult>> {
    let axes = plan.varying_axes();
    if axes.len() > 1 {
        return Err(Error::Input(format!(
            "a sweep varies one axis at a time; got {}",
            axes.join(", ")
        )));
    }
    run_edd(plan)
}

pub const REPLICATION_COLUMNS: [&str; 10] = [
    "method",
    "case",
    "B0",
    "N",
    "kernel",
    "sigma_multiplier",
    "replication",
    "delay",
    "censored",
    "subsampling",
];

pub const SUMMARY_COLUMNS: [&str; 15] = [
    "method",
    "case",
    "B0",
    "N",
    "kernel",
    "sigma_multiplier",
    "subsampling",
    "threshold",
    "edd_cap",
    "replications",
    "censored",
    "censoring_fraction",
    "median",
    "mean",
    "sd",
];

/// Key columns shared by both files; empty for parameters a method lacks.
fn key_fields(cell: &Cell) -> [String; 7] {
    let scan = cell.scan;
    [
        cell.method.to_string(),
        cell.case.to_string(),
        cell.block_size.to_string(),
        scan.map(|s| s.n_blocks.to_string()).unwrap_or_default(),
        scan.map(|s| s.kernel.to_string()).unwrap_or_default(),
        scan.map(|s| s.sigma_multiplier.to_string()).unwrap_or_default(),
        scan.map(|s| s.subsampling.as_str().to_string()).unwrap_or_default(),
    ]
}

/// Summary row, formatted exactly as written to the summary file.
pub fn summary_record(r: &EddResult) -> Vec<String> {
    let mut row: Vec<String> = key_fields(&r.cell).into();
    let s = &r.summary;
    row.extend([
        r.threshold.to_string(),
        r.edd_cap.to_string(),
        s.replications.to_string(),
        s.censored.to_string(),
        s.censoring_fraction.to_string(),
        s.median.to_string(),
        s.mean.to_string(),
        s.sd.to_string(),
    ]);
    row
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedFiles {
    pub replications: PathBuf,
    pub summary: PathBuf,
}

pub const REPLICATIONS_FILE: &str = "edd_replications.csv";
pub const SUMMARY_FILE: &str = "edd_summary.csv";
pub const METADATA_FILE: &str = "metadata.csv";

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write the per-replication and per-cell tables into `dir`.
pub fn emit_results(results: &[EddResult], dir: &Path) -> Result<EmittedFiles> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = EmittedFiles {
        replications: dir.join(REPLICATIONS_FILE),
        summary: dir.join(SUMMARY_FILE),
    };
    let rep_rows = results.iter().flat_map(|r| {
        let [method, case, b0, n, kernel, sigma, subsampling] = key_fields(&r.cell);
        r.delays.iter().enumerate().map(move |(i, d)| {
            vec![
                method.clone(),
                case.clone(),
                b0.clone(),
                n.clone(),
                kernel.clone(),
                sigma.clone(),
                i.to_string(),
                d.map(|v| v.to_string()).unwrap_or_default(),
                d.is_none().to_string(),
                subsampling.clone(),
            ]
        })
    });
    write_rows(&files.replications, &REPLICATION_COLUMNS, rep_rows)?;
    write_rows(&files.summary, &SUMMARY_COLUMNS, results.iter().map(summary_record))?;
    Ok(files)
}

/// Record the plan constants next to the result tables.
pub fn emit_metadata(plan: &ExperimentPlan, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(METADATA_FILE);
    let join = |v: Vec<String>| v.join(";");
    let rows: Vec<[String; 2]> = vec![
        ["base_seed".into(), plan.base_seed.to_string()],
        ["target_arl".into(), plan.target_arl.to_string()],
        ["replications".into(), plan.replications.to_string()],
        ["edd_cap".into(), plan.edd_cap.to_string()],
        ["reference_pool_size".into(), plan.reference_pool_size.to_string()],
        ["variance_tuples".into(), plan.variance_tuples.to_string()],
        ["calibration_reps".into(), plan.calibration_reps.to_string()],
        ["reblock_policy".into(), plan.reblock_policy.as_str().into()],
        ["block_sizes".into(), join(plan.block_sizes.iter().map(|v| v.to_string()).collect())],
        ["n_blocks".into(), join(plan.n_blocks.iter().map(|v| v.to_string()).collect())],
        ["kernels".into(), join(plan.kernels.iter().map(|v| v.to_string()).collect())],
        ["sigma_multipliers".into(), join(plan.sigma_multipliers.iter().map(|v| v.to_string()).collect())],
        ["subsampling".into(), join(plan.subsampling.iter().map(|v| v.as_str().to_string()).collect())],
        [
            "grid_source".into(),
            "grid values are this tool's own choices, not published settings".into(),
        ],
    ];
    write_rows(&path, &["key", "value"], rows)?;
    Ok(path)
}
