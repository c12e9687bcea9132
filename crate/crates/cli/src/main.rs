//! `scanb` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure (including
//! malformed CSV rows), 2 usage or validation error.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scanb::calibration::{arl_approx, threshold_for_arl, ArlQuery};
use scanb::detector::{DetectorConfig, Decision, ReblockPolicy, ReferencePool, ScanBDetector, Subsampling};
use scanb::harness::{emit_metadata, emit_results, run_edd, run_sweep, Method};
use scanb::kernel::{median_bandwidth, KernelFamily, KernelSpec};
use scanb::simgen::{generate, read_samples_csv, write_samples_csv, CaseId, StreamSpec};
use scanb::Error;

use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "scanb", version, about = "Kernel scan B-statistic change-point detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Threshold for a target average run length.
    Calibrate {
        #[arg(long)]
        arl: f64,
        #[arg(long, default_value_t = 20)]
        b0: usize,
    },
    /// Run the detector over a stream CSV against a reference-pool CSV.
    Detect(DetectArgs),
    /// Write a synthetic stream to CSV.
    Generate {
        #[arg(long)]
        case: CaseId,
        #[arg(long)]
        tau: usize,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the case's dimension (null-only streams only).
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Write an x1,x2,... header row.
        #[arg(long)]
        header: bool,
    },
    /// Run a Monte Carlo detection-delay experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Explicit threshold; otherwise derived from --arl.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 500.0)]
    arl: f64,
    #[arg(long, default_value_t = 20)]
    b0: usize,
    #[arg(long, default_value_t = 5)]
    n_blocks: usize,
    #[arg(long, default_value = "gaussian-rbf")]
    kernel: KernelFamily,
    /// Explicit RBF bandwidth; otherwise a multiple of the pool median distance.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma_multiplier: f64,
    #[arg(long, default_value_t = 1.0)]
    poly_offset: f64,
    #[arg(long, default_value_t = 2)]
    poly_degree: u32,
    #[arg(long, default_value = "structured")]
    subsampling: Subsampling,
    #[arg(long, default_value = "fixed-at-init")]
    reblock: ReblockPolicy,
    #[arg(long, default_value_t = 10_000)]
    variance_tuples: usize,
    /// Seed for block draws and variance tuples.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sweep: bool,
    #[arg(long)]
    verbose: bool,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, value_delimiter = ',')]
    cases: Option<Vec<CaseId>>,
    #[arg(long)]
    target_arl: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    b0: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    n_blocks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    kernels: Option<Vec<KernelFamily>>,
    #[arg(long, value_delimiter = ',')]
    sigma_multipliers: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    subsampling: Option<Vec<Subsampling>>,
    #[arg(long)]
    reblock: Option<ReblockPolicy>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    edd_cap: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    variance_tuples: Option<usize>,
    #[arg(long)]
    calibration_reps: Option<usize>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Input(_) | Error::Config(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Read(..) => 1,
            ConfigError::Parse(..) => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate { arl, b0 } => calibrate(arl, b0),
        Command::Detect(args) => detect(args),
        Command::Generate {
            case,
            tau,
            length,
            seed,
            dim,
            out,
            header,
        } => generate_cmd(case, tau, length, seed, dim, out, header),
        Command::Experiment(args) => experiment(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn calibrate(arl: f64, b0: usize) -> Result<(), Failure> {
    if !(arl.is_finite() && arl > 1.0) {
        return Err(Failure::usage(format!("--arl must be > 1, got {arl}")));
    }
    if b0 < 2 {
        return Err(Failure::usage(format!("--b0 must be >= 2, got {b0}")));
    }
    let b = threshold_for_arl(ArlQuery {
        target_arl: arl,
        block_size: b0,
    })?;
    println!("threshold={b}");
    println!("arl_check={}", arl_approx(b, b0)?);
    Ok(())
}

fn detect(a: DetectArgs) -> Result<(), Failure> {
    let pool_samples = read_samples_csv(&a.pool)?;
    let stream = read_samples_csv(&a.stream)?;
    let pool = ReferencePool::new(pool_samples, a.seed)?;
    let kernel = match a.kernel {
        KernelFamily::Polynomial => KernelSpec::polynomial(a.poly_offset, a.poly_degree)?,
        family => {
            let sigma = match a.sigma {
                Some(s) => s,
                None => a.sigma_multiplier * median_bandwidth(pool.samples())?,
            };
            KernelSpec::rbf(family, sigma)?
        }
    };
    let threshold = match a.threshold {
        Some(t) => t,
        None => {
            if !(a.arl.is_finite() && a.arl > 1.0) {
                return Err(Failure::usage(format!("--arl must be > 1, got {}", a.arl)));
            }
            threshold_for_arl(ArlQuery {
                target_arl: a.arl,
                block_size: a.b0,
            })?
        }
    };
    let mut config = DetectorConfig::new(a.b0, a.n_blocks, kernel, threshold);
    config.subsampling = a.subsampling;
    config.reblock_policy = a.reblock;
    config.variance_tuples = a.variance_tuples;

    println!("seed={}", a.seed);
    println!("kernel={kernel}");
    println!("threshold={threshold}");
    let mut det = ScanBDetector::new(config, pool)?;
    for s in &stream {
        if let Decision::Alarm { t, statistic } = det.step(s)? {
            println!("alarm at t={t}");
            println!("statistic={statistic}");
            return Ok(());
        }
    }
    println!("no alarm");
    match det.last_statistic() {
        Some(v) => println!("final_statistic={v}"),
        None => println!("final_statistic=none"),
    }
    Ok(())
}

fn generate_cmd(
    case: CaseId,
    tau: usize,
    length: usize,
    seed: u64,
    dim: Option<usize>,
    out: PathBuf,
    header: bool,
) -> Result<(), Failure> {
    let mut spec = StreamSpec::new(case, tau, length, seed);
    if let Some(d) = dim {
        spec.dim = d;
    }
    let samples = generate(&spec)?;
    write_samples_csv(&out, &samples, header)?;
    println!("seed={seed}");
    println!("rows={} dim={}", samples.len(), spec.dim);
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let p = &mut cfg.plan;
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(cfg.out_dir, a.out);
    set!(p.base_seed, a.seed);
    set!(p.methods, a.methods);
    set!(p.cases, a.cases);
    set!(p.target_arl, a.target_arl);
    set!(p.block_sizes, a.b0);
    set!(p.n_blocks, a.n_blocks);
    set!(p.kernels, a.kernels);
    set!(p.sigma_multipliers, a.sigma_multipliers);
    set!(p.subsampling, a.subsampling);
    set!(p.reblock_policy, a.reblock);
    set!(p.replications, a.replications);
    set!(p.edd_cap, a.edd_cap);
    set!(p.reference_pool_size, a.pool_size);
    set!(p.variance_tuples, a.variance_tuples);
    set!(p.calibration_reps, a.calibration_reps);
    cfg.sweep |= a.sweep;
    cfg.verbose |= a.verbose;

    let plan = &cfg.plan;
    plan.validate()?;
    println!("base_seed={}", plan.base_seed);
    let results = if cfg.sweep { run_sweep(plan)? } else { run_edd(plan)? };
    for r in &results {
        let s = &r.summary;
        println!(
            "{}: threshold={:.4} mean={:.2} median={} sd={:.2} censored={}/{}",
            r.cell, r.threshold, s.mean, s.median, s.sd, s.censored, s.replications
        );
    }
    let files = emit_results(&results, &cfg.out_dir)?;
    let meta = emit_metadata(plan, &cfg.out_dir)?;
    if cfg.verbose {
        println!("wrote {}", files.replications.display());
        println!("wrote {}", files.summary.display());
        println!("wrote {}", meta.display());
    }
    Ok(())
}
