//! Threshold calibration.
//!
//! Two routes from a target average run length (ARL) to a threshold:
//!
//! * the analytic tail approximation for the scan B-statistic,
//!
//!   ```text
//!   ARL(b) ≈ (e^{b²/2} / b) · [ (2B-1) / (√(2π) B(B-1)) · ν(b √(2(2B-1)/(B(B-1)))) ]^{-1}
//!   ν(μ)   ≈ (2/μ)(Φ(μ/2) - 1/2) / ((μ/2)Φ(μ/2) + φ(μ/2))
//!   ```
//!
//!   inverted by bisection ([`threshold_for_arl`]);
//! * Monte Carlo run lengths under the null for any [`StreamingStatistic`]
//!   ([`simulate_arl`], [`calibrate_threshold_by_simulation`]).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rayon::prelude::*;
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::{Sample, StreamingStatistic};

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Φ(x) - 1/2`, computed without cancellation near zero.
fn std_normal_cdf_minus_half(x: f64) -> f64 {
    0.5 * erf(x * FRAC_1_SQRT_2)
}

/// The special function ν(μ) of the ARL approximation.
pub fn nu(mu: f64) -> Result<f64> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Input(format!("nu requires mu > 0, got {mu}")));
    }
    let half = 0.5 * mu;
    let centered = std_normal_cdf_minus_half(half);
    let cdf = centered + 0.5;
    Ok((2.0 / mu) * centered / (half * cdf + std_normal_pdf(half)))
}

fn check_block_size(block_size: usize) -> Result<()> {
    if block_size < 2 {
        return Err(Error::Input(format!("block size must be >= 2, got {block_size}")));
    }
    Ok(())
}

/// Natural log of [`arl_approx`]; finite where the ARL itself overflows.
pub fn log_arl_approx(b: f64, block_size: usize) -> Result<f64> {
    check_block_size(block_size)?;
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::Input(format!("threshold must be positive, got {b}")));
    }
    let bs = block_size as f64;
    let pairs = bs * (bs - 1.0);
    let lead = (2.0 * bs - 1.0) / ((2.0 * PI).sqrt() * pairs);
    let mu = b * (2.0 * (2.0 * bs - 1.0) / pairs).sqrt();
    Ok(0.5 * b * b - b.ln() - lead.ln() - nu(mu)?.ln())
}

/// Approximate ARL of the scan B stopping rule at threshold `b`.
pub fn arl_approx(b: f64, block_size: usize) -> Result<f64> {
    log_arl_approx(b, block_size).map(f64::exp)
}

/// Target ARL and block size for [`threshold_for_arl`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArlQuery {
    pub target_arl: f64,
    pub block_size: usize,
}

/// Relative tolerance on the ARL reached by [`threshold_for_arl`].
pub const ARL_REL_TOL: f64 = 1e-6;

/// Threshold below which the approximation stops increasing in `b`.
///
/// As `b -> 0` the `1/b` factor makes the approximate ARL blow up, so the
/// function has a single interior minimum. Only the increasing branch to
/// its right is meaningful for calibration.
pub fn min_meaningful_threshold(block_size: usize) -> Result<f64> {
    check_block_size(block_size)?;
    let f = |b: f64| log_arl_approx(b, block_size).expect("validated");
    let (mut lo, mut hi) = (1e-3, 10.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Invert the ARL approximation by bisection.
pub fn threshold_for_arl(query: ArlQuery) -> Result<f64> {
    let ArlQuery { target_arl, block_size } = query;
    check_block_size(block_size)?;
    if !(target_arl.is_finite() && target_arl > 1.0) {
        return Err(Error::Input(format!("target ARL must be > 1, got {target_arl}")));
    }
    let log_target = target_arl.ln();
    let f = |b: f64| log_arl_approx(b, block_size);

    let b_min = min_meaningful_threshold(block_size)?;
    let floor = f(b_min)?;
    if log_target <= floor {
        return Err(Error::Numerical(format!(
            "target ARL {target_arl} is below the smallest ARL the approximation attains \
             ({:.3} at b={b_min:.4}) for B0={block_size}",
            floor.exp()
        )));
    }

    let mut lo = b_min.max(0.1);
    if f(lo)? > log_target {
        lo = b_min;
    }
    let mut hi = 10.0;
    let mut grow = 0;
    while f(hi)? < log_target {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 40 {
            return Err(Error::Numerical(format!(
                "could not bracket ARL {target_arl} for B0={block_size}; upper end reached {hi}"
            )));
        }
    }

    // log ARL within ln(1 + tol) of the target.
    let log_tol = (1.0 + ARL_REL_TOL).ln() * 0.5;
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        if (v - log_target).abs() <= log_tol {
            return Ok(mid);
        }
        if v < log_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numerical(format!(
        "bisection for ARL {target_arl}, B0={block_size} did not converge (bracket [{lo}, {hi}])"
    )))
}

/// One replication of a null experiment: a fresh statistic and the null
/// stream it consumes.
pub struct NullRun<S> {
    pub statistic: S,
    pub stream: Box<dyn Iterator<Item = Sample> + Send>,
}

/// A family of independent null replications indexed by replication number.
///
/// Implementations derive all randomness from their own base seed and the
/// replication index, so replication `i` is the same no matter which thread
/// runs it or in which order.
pub trait NullScenario: Sync {
    type Statistic: StreamingStatistic + Send;

    fn replicate(&self, rep: u64) -> Result<NullRun<Self::Statistic>>;
}

/// Monte Carlo run-length summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ArlResult {
    pub threshold: f64,
    pub horizon: u64,
    /// Tested steps until the first exceedance, or `horizon` when censored.
    pub run_lengths: Vec<u64>,
    pub censored: Vec<bool>,
    pub mean: f64,
    pub std_error: f64,
    pub censored_count: usize,
}

impl ArlResult {
    fn from_runs(threshold: f64, horizon: u64, runs: Vec<(u64, bool)>) -> Self {
        let (run_lengths, censored): (Vec<u64>, Vec<bool>) = runs.into_iter().unzip();
        let n = run_lengths.len() as f64;
        let mean = run_lengths.iter().map(|&r| r as f64).sum::<f64>() / n;
        let var = if run_lengths.len() > 1 {
            run_lengths.iter().map(|&r| (r as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let censored_count = censored.iter().filter(|&&c| c).count();
        Self {
            threshold,
            horizon,
            run_lengths,
            censored,
            mean,
            std_error: (var / n).sqrt(),
            censored_count,
        }
    }

    pub fn reps(&self) -> usize {
        self.run_lengths.len()
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored_count as f64 / self.reps() as f64
    }

    /// More than 20% of runs hit the horizon; the mean is then a loose
    /// lower bound.
    pub fn heavily_censored(&self) -> bool {
        self.censored_fraction() > 0.2
    }
}

/// Samples a statistic may consume before its first tested value.
const MAX_WARMUP: u64 = 100_000;

/// Run one replication to its first exceedance of `threshold`, or to
/// `horizon` tested steps.
pub fn run_length<S: StreamingStatistic + ?Sized>(
    statistic: &mut S,
    stream: &mut dyn Iterator<Item = Sample>,
    threshold: f64,
    horizon: u64,
) -> Result<(u64, bool)> {
    let mut tested = 0u64;
    let mut untested = 0u64;
    while tested < horizon {
        let sample = stream
            .next()
            .ok_or_else(|| Error::Input("null stream ended before the horizon".into()))?;
        match statistic.observe(&sample)? {
            Some(v) => {
                tested += 1;
                if v > threshold {
                    return Ok((tested, false));
                }
            }
            None => {
                untested += 1;
                if untested > MAX_WARMUP {
                    return Err(Error::Numerical(format!(
                        "statistic produced no value within {MAX_WARMUP} samples"
                    )));
                }
            }
        }
    }
    Ok((horizon, true))
}

/// Mean run length over `reps` independent null replications `0..reps`.
pub fn simulate_arl<N: NullScenario>(scenario: &N, threshold: f64, reps: usize, horizon: u64) -> Result<ArlResult> {
    simulate_arl_range(scenario, threshold, 0..reps as u64, horizon)
}

fn simulate_arl_range<N: NullScenario>(
    scenario: &N,
    threshold: f64,
    reps: std::ops::Range<u64>,
    horizon: u64,
) -> Result<ArlResult> {
    if reps.is_empty() {
        return Err(Error::Input("need at least one replication".into()));
    }
    if horizon < 1 {
        return Err(Error::Input("horizon must be at least 1".into()));
    }
    let runs = reps
        .into_par_iter()
        .map(|rep| {
            let NullRun { mut statistic, mut stream } = scenario.replicate(rep)?;
            run_length(&mut statistic, &mut stream, threshold, horizon)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ArlResult::from_runs(threshold, horizon, runs))
}

/// Running maximum of the tested statistic values of each replication, up
/// to `horizon` tested steps.
fn record_running_maxima<N: NullScenario>(
    scenario: &N,
    reps: std::ops::Range<u64>,
    horizon: u64,
) -> Result<Vec<Vec<f64>>> {
    reps.into_par_iter()
        .map(|rep| {
            let NullRun { mut statistic, mut stream } = scenario.replicate(rep)?;
            let mut maxima = Vec::with_capacity(horizon.min(1 << 20) as usize);
            let mut running = f64::NEG_INFINITY;
            let mut untested = 0u64;
            while (maxima.len() as u64) < horizon {
                let sample = stream
                    .next()
                    .ok_or_else(|| Error::Input("null stream ended before the horizon".into()))?;
                match statistic.observe(&sample)? {
                    Some(v) => {
                        if v.is_nan() {
                            return Err(Error::Numerical("statistic returned NaN".into()));
                        }
                        running = running.max(v);
                        maxima.push(running);
                    }
                    None => {
                        untested += 1;
                        if untested > MAX_WARMUP {
                            return Err(Error::Numerical(format!(
                                "statistic produced no value within {MAX_WARMUP} samples"
                            )));
                        }
                    }
                }
            }
            Ok(maxima)
        })
        .collect()
}

/// Same result as [`run_length`] on the replication the maxima came from.
fn run_length_from_maxima(maxima: &[f64], threshold: f64, horizon: u64) -> (u64, bool) {
    let below = maxima.partition_point(|&m| m <= threshold);
    if below < maxima.len() {
        (below as u64 + 1, false)
    } else {
        (horizon, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationCalibration {
    pub reps: usize,
    /// Tested-step horizon per run; defaults to 10x the target.
    pub horizon: Option<u64>,
    /// Accepted relative error between simulated and target ARL.
    pub accept_rel_err: f64,
    /// Bisection stops early once this close to the target.
    pub stop_rel_err: f64,
}

impl Default for SimulationCalibration {
    fn default() -> Self {
        Self {
            reps: 200,
            horizon: None,
            accept_rel_err: 0.10,
            stop_rel_err: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibratedThreshold {
    pub threshold: f64,
    pub arl: ArlResult,
}

/// Find the threshold whose simulated ARL matches `target_arl`.
///
/// Every evaluation uses the same replications, so the empirical ARL is a
/// non-decreasing step function of the threshold and bisection on it is
/// well defined. When no threshold lands within the accepted error (the
/// step function jumps over the target), the search is retried once with
/// twice the replications.
pub fn calibrate_threshold_by_simulation<N: NullScenario>(
    scenario: &N,
    target_arl: f64,
    opts: SimulationCalibration,
) -> Result<CalibratedThreshold> {
    if !(target_arl.is_finite() && target_arl >= 10.0) {
        return Err(Error::Input(format!("simulation calibration needs target ARL >= 10, got {target_arl}")));
    }
    if opts.reps < 1 {
        return Err(Error::Input("need at least one replication".into()));
    }
    match bisect_threshold(scenario, target_arl, opts) {
        Err(Error::Calibration(first)) => {
            let retry = SimulationCalibration {
                reps: opts.reps * 2,
                ..opts
            };
            bisect_threshold(scenario, target_arl, retry).map_err(|e| match e {
                Error::Calibration(second) => {
                    Error::Calibration(format!("{second} (after retry; first attempt: {first})"))
                }
                other => other,
            })
        }
        other => other,
    }
}

fn bisect_threshold<N: NullScenario>(
    scenario: &N,
    target: f64,
    opts: SimulationCalibration,
) -> Result<CalibratedThreshold> {
    let horizon = opts.horizon.unwrap_or((10.0 * target).ceil() as u64).max(1);
    // Each replication is simulated once; its running maximum then gives the
    // run length at every threshold without replaying the stream.
    let paths = record_running_maxima(scenario, 0..opts.reps as u64, horizon)?;
    let eval = |thr: f64| -> Result<ArlResult> {
        let runs = paths.iter().map(|m| run_length_from_maxima(m, thr, horizon)).collect();
        Ok(ArlResult::from_runs(thr, horizon, runs))
    };

    // Bracket from the observed range of the statistic.
    let (mut lo_val, mut hi_val) = (f64::INFINITY, f64::NEG_INFINITY);
    for m in &paths {
        if let (Some(first), Some(last)) = (m.first(), m.last()) {
            lo_val = lo_val.min(*first);
            hi_val = hi_val.max(*last);
        }
    }
    if !lo_val.is_finite() || !hi_val.is_finite() {
        return Err(Error::Calibration("null runs produced no finite statistic values".into()));
    }
    let spread = (hi_val - lo_val).max(1e-6 * hi_val.abs().max(1.0));
    let mut lo = lo_val - spread;
    let mut hi = hi_val;

    let mut evaluated: Vec<ArlResult> = Vec::new();
    let record = |r: ArlResult, evaluated: &mut Vec<ArlResult>| -> Result<f64> {
        let mean = r.mean;
        evaluated.push(r);
        let mut sorted: Vec<(f64, f64)> = evaluated.iter().map(|r| (r.threshold, r.mean)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err(Error::Calibration(
                "empirical ARL is not monotone in the threshold".into(),
            ));
        }
        Ok(mean)
    };

    let at_lo = record(eval(lo)?, &mut evaluated)?;
    if at_lo >= target {
        return Err(Error::Calibration(format!(
            "ARL {at_lo} already exceeds target {target} below the statistic's observed range"
        )));
    }
    let mut grow = 0;
    while record(eval(hi)?, &mut evaluated)? < target {
        let width = hi - lo;
        lo = hi;
        hi += 2.0 * width;
        grow += 1;
        if grow > 60 {
            return Err(Error::Calibration(format!(
                "could not reach ARL {target} with thresholds up to {hi}"
            )));
        }
    }

    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let arl = record(eval(mid)?, &mut evaluated)?;
        if (arl / target - 1.0).abs() <= opts.stop_rel_err {
            break;
        }
        if arl < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
    }

    let best = evaluated
        .into_iter()
        .min_by(|a, b| (a.mean / target - 1.0).abs().total_cmp(&(b.mean / target - 1.0).abs()))
        .expect("at least two evaluations");
    let err = (best.mean / target - 1.0).abs();
    if err > opts.accept_rel_err {
        return Err(Error::Calibration(format!(
            "closest simulated ARL {:.1} misses target {target} by {:.1}% (tolerance {:.0}%)",
            best.mean,
            100.0 * err,
            100.0 * opts.accept_rel_err
        )));
    }
    Ok(CalibratedThreshold {
        threshold: best.threshold,
        arl: best,
    })
}

/// Simulated ARL on replications disjoint from those used for calibration.
pub fn validate_threshold<N: NullScenario>(
    scenario: &N,
    threshold: f64,
    reps: usize,
    horizon: u64,
    offset: u64,
) -> Result<ArlResult> {
    simulate_arl_range(scenario, threshold, offset..offset + reps as u64, horizon)
}
