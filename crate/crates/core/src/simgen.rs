//! Seeded synthetic streams for the benchmark distribution shifts.
//!
//! | case | pre-change `P` | post-change `Q` |
//! |------|----------------|-----------------|
//! | 1 | N(0, I₁₀) | N(1, I₁₀) |
//! | 2 | N(0, I₁₀) | N(0, diag(2,2,2,2,2,1,1,1,1,1)) |
//! | 3 | N(0, I₁₀) | N(0, 2 I₁₀) |
//! | 4 | N(0, I₁₀) | 0.3 N(0, I₁₀) + 0.7 N(0, 0.1 I₁₀) |
//! | 5 | N(0, 1) | Laplace(0, 1/√2) (unit variance) |
//!
//! Pre- and post-change segments of a stream use independent generators
//! derived from the stream seed, so the post-change samples do not depend
//! on how many pre-change samples precede them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detector::ReferencePool;
use crate::error::{Error, Result};
use crate::seed::{rng_from, role};
use crate::Sample;

const PRE_CHANGE: u64 = 1;
const POST_CHANGE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseId {
    #[serde(rename = "case1-mean-shift")]
    MeanShift,
    #[serde(rename = "case2-partial-cov")]
    PartialCov,
    #[serde(rename = "case3-full-cov")]
    FullCov,
    #[serde(rename = "case4-mixture")]
    Mixture,
    #[serde(rename = "case5-laplace")]
    Laplace,
    #[serde(rename = "null-only")]
    NullOnly,
}

impl CaseId {
    pub const BENCHMARK: [CaseId; 5] = [
        CaseId::MeanShift,
        CaseId::PartialCov,
        CaseId::FullCov,
        CaseId::Mixture,
        CaseId::Laplace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseId::MeanShift => "case1-mean-shift",
            CaseId::PartialCov => "case2-partial-cov",
            CaseId::FullCov => "case3-full-cov",
            CaseId::Mixture => "case4-mixture",
            CaseId::Laplace => "case5-laplace",
            CaseId::NullOnly => "null-only",
        }
    }

    /// Dimension fixed by the case; `None` for the null-only stream.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            CaseId::Laplace => Some(1),
            CaseId::NullOnly => None,
            _ => Some(10),
        }
    }

    pub fn default_dim(self) -> usize {
        self.fixed_dim().unwrap_or(10)
    }

    /// Stable small integer used in seed derivation.
    pub fn index(self) -> u64 {
        match self {
            CaseId::MeanShift => 1,
            CaseId::PartialCov => 2,
            CaseId::FullCov => 3,
            CaseId::Mixture => 4,
            CaseId::Laplace => 5,
            CaseId::NullOnly => 0,
        }
    }

    fn post_change(self, dim: usize) -> Law {
        match self {
            CaseId::MeanShift => Law::Gaussian {
                mean: vec![1.0; dim],
                std: vec![1.0; dim],
            },
            CaseId::PartialCov => Law::Gaussian {
                mean: vec![0.0; dim],
                std: (0..dim).map(|i| if i < 5 { 2f64.sqrt() } else { 1.0 }).collect(),
            },
            CaseId::FullCov => Law::Gaussian {
                mean: vec![0.0; dim],
                std: vec![2f64.sqrt(); dim],
            },
            CaseId::Mixture => Law::ScaleMixture {
                dim,
                narrow_weight: 0.7,
                narrow_std: 0.1f64.sqrt(),
            },
            CaseId::Laplace => Law::Laplace {
                dim,
                scale: std::f64::consts::FRAC_1_SQRT_2,
            },
            CaseId::NullOnly => Law::standard(dim),
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            CaseId::MeanShift,
            CaseId::PartialCov,
            CaseId::FullCov,
            CaseId::Mixture,
            CaseId::Laplace,
            CaseId::NullOnly,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| Error::Input(format!("unknown case id {s:?}")))
    }
}

#[derive(Debug, Clone)]
enum Law {
    /// Independent coordinates.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// `(1-w) N(0, I) + w N(0, s² I)`, component chosen per sample.
    ScaleMixture {
        dim: usize,
        narrow_weight: f64,
        narrow_std: f64,
    },
    /// Independent zero-mean Laplace coordinates.
    Laplace { dim: usize, scale: f64 },
}

impl Law {
    fn standard(dim: usize) -> Self {
        Law::Gaussian {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        match self {
            Law::Gaussian { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Law::ScaleMixture {
                dim,
                narrow_weight,
                narrow_std,
            } => {
                let s = if rng.random_bool(*narrow_weight) { *narrow_std } else { 1.0 };
                (0..*dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
            }
            Law::Laplace { dim, scale } => (0..*dim)
                .map(|_| {
                    // Inverse CDF on u in (-1/2, 1/2).
                    let u: f64 = rng.random::<f64>() - 0.5;
                    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSpec {
    pub case: CaseId,
    pub dim: usize,
    /// Number of pre-change samples before the shift.
    pub tau: usize,
    pub length: usize,
    pub seed: u64,
}

impl StreamSpec {
    pub fn new(case: CaseId, tau: usize, length: usize, seed: u64) -> Self {
        Self {
            case,
            dim: case.default_dim(),
            tau,
            length,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau > self.length {
            return Err(Error::Input(format!(
                "change point tau={} exceeds stream length {}",
                self.tau, self.length
            )));
        }
        if self.dim == 0 {
            return Err(Error::Input("stream dimension must be positive".into()));
        }
        if let Some(d) = self.case.fixed_dim() {
            if d != self.dim {
                return Err(Error::Input(format!(
                    "{} is {d}-dimensional, got dim={}",
                    self.case, self.dim
                )));
            }
        }
        Ok(())
    }
}

/// `tau` samples from the pre-change law followed by `length - tau` from the
/// post-change law.
pub fn generate(spec: &StreamSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut out = pre_change_samples(spec.case, spec.dim, spec.tau, spec.seed);
    out.extend(post_change_samples(spec.case, spec.dim, spec.length - spec.tau, spec.seed));
    Ok(out)
}

/// Pre-change (null) samples for a stream seed.
pub fn pre_change_samples(_case: CaseId, dim: usize, count: usize, seed: u64) -> Vec<Sample> {
    let law = Law::standard(dim);
    let mut rng = rng_from(seed, &[PRE_CHANGE]);
    (0..count).map(|_| law.sample(&mut rng)).collect()
}

/// Post-change samples for a stream seed.
pub fn post_change_samples(case: CaseId, dim: usize, count: usize, seed: u64) -> Vec<Sample> {
    let law = case.post_change(dim);
    let mut rng = rng_from(seed, &[POST_CHANGE]);
    (0..count).map(|_| law.sample(&mut rng)).collect()
}

/// Endless pre-change stream, for null run-length simulation.
pub fn null_stream(dim: usize, seed: u64) -> impl Iterator<Item = Sample> + Send {
    let law = Law::standard(dim);
    let mut rng = rng_from(seed, &[PRE_CHANGE]);
    std::iter::repeat_with(move || law.sample(&mut rng))
}

/// `size` i.i.d. pre-change samples. The generator is keyed by a pool role
/// so a pool never shares randomness with a stream of the same seed.
pub fn generate_reference_pool(case: CaseId, size: usize, seed: u64) -> Result<ReferencePool> {
    generate_reference_pool_dim(case, case.default_dim(), size, seed)
}

pub fn generate_reference_pool_dim(case: CaseId, dim: usize, size: usize, seed: u64) -> Result<ReferencePool> {
    if size < 1 {
        return Err(Error::Input("reference pool size must be at least 1".into()));
    }
    StreamSpec { case, dim, tau: 0, length: 0, seed }.validate()?;
    let law = Law::standard(dim);
    let mut rng = rng_from(seed, &[role::POOL]);
    ReferencePool::new((0..size).map(|_| law.sample(&mut rng)).collect(), seed)
}

/// Write samples as CSV, one row per sample, optionally with a
/// `x1,x2,...` header.
pub fn write_samples_csv(path: &Path, samples: &[Sample], header: bool) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    if header {
        let dim = samples.first().map_or(0, Vec::len);
        w.write_record((1..=dim).map(|i| format!("x{i}"))).map_err(csv_err)?;
    }
    for s in samples {
        w.write_record(s.iter().map(f64::to_string)).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a sample CSV. A first row that does not parse as numbers is taken
/// as a header. Rows are 1-based in error messages. A row whose width
/// differs from the first data row is an input error; a non-numeric field
/// is a [`Error::MalformedRow`].
pub fn read_samples_csv(path: &Path) -> Result<Vec<Sample>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let mut out: Vec<Sample> = Vec::new();
    for (i, record) in r.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if row == 1 => continue,
            Err(e) => {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    message: format!("{e} in {:?}", record.iter().collect::<Vec<_>>()),
                })
            }
        };
        if let Some(first) = out.first() {
            if values.len() != first.len() {
                return Err(Error::Input(format!(
                    "{}: row {row} has {} columns, expected {}",
                    path.display(),
                    values.len(),
                    first.len()
                )));
            }
        }
        out.push(values);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_moments(samples: &[Sample], j: usize) -> (f64, f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        let m2 = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / n;
        let m4 = samples.iter().map(|s| (s[j] - mean).powi(4)).sum::<f64>() / n;
        (mean, m2, m4 / (m2 * m2) - 3.0)
    }

    #[test]
    fn tau_equal_length_is_pure_null() {
        for case in CaseId::BENCHMARK {
            let spec = StreamSpec::new(case, 50, 50, 1);
            let s = generate(&spec).unwrap();
            assert_eq!(s, pre_change_samples(case, spec.dim, 50, 1));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate(&StreamSpec::new(CaseId::MeanShift, 300, 200, 1)).is_err());
        let mut s = StreamSpec::new(CaseId::Laplace, 0, 10, 1);
        s.dim = 3;
        assert!(generate(&s).is_err());
        let mut s = StreamSpec::new(CaseId::NullOnly, 0, 10, 1);
        s.dim = 3;
        assert_eq!(generate(&s).unwrap()[0].len(), 3);
        assert!(generate_reference_pool(CaseId::MeanShift, 0, 1).is_err());
    }

    #[test]
    fn post_change_independent_of_tau() {
        let a = generate(&StreamSpec::new(CaseId::FullCov, 10, 30, 4)).unwrap();
        let b = generate(&StreamSpec::new(CaseId::FullCov, 20, 40, 4)).unwrap();
        assert_eq!(a[10..], b[20..]);
    }

    #[test]
    fn case3_variance() {
        let s = post_change_samples(CaseId::FullCov, 10, 50_000, 5);
        for j in 0..10 {
            let (_, var, _) = column_moments(&s, j);
            assert!((1.9..=2.1).contains(&var), "coord {j}: {var}");
        }
    }

    #[test]
    fn case2_variance_pattern() {
        let s = post_change_samples(CaseId::PartialCov, 10, 50_000, 6);
        for j in 0..10 {
            let (_, var, _) = column_moments(&s, j);
            let expected = if j < 5 { 2.0 } else { 1.0 };
            assert!((var / expected - 1.0).abs() < 0.05, "coord {j}: {var}");
        }
    }

    #[test]
    fn case4_mixture_variance() {
        let s = post_change_samples(CaseId::Mixture, 10, 50_000, 7);
        for j in 0..10 {
            let (_, var, _) = column_moments(&s, j);
            assert!((var / 0.37 - 1.0).abs() < 0.05, "coord {j}: {var}");
        }
    }

    #[test]
    fn case5_laplace_moments() {
        let s = post_change_samples(CaseId::Laplace, 1, 50_000, 8);
        let (mean, var, kurt) = column_moments(&s, 0);
        assert!(mean.abs() < 0.03);
        assert!((0.96..=1.04).contains(&var), "{var}");
        assert!((2.7..=3.3).contains(&kurt), "{kurt}");
    }

    #[test]
    fn case1_mean_shift() {
        let s = post_change_samples(CaseId::MeanShift, 10, 20_000, 9);
        for j in 0..10 {
            let (mean, var, _) = column_moments(&s, j);
            assert!((mean - 1.0).abs() < 0.03 && (var - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn pools_are_centered_and_seeded() {
        let size = 2000;
        for case in CaseId::BENCHMARK {
            let pool = generate_reference_pool(case, size, 10).unwrap();
            let d = pool.dim();
            assert_eq!(d, case.default_dim());
            let norm = (0..d)
                .map(|j| (pool.samples().iter().map(|s| s[j]).sum::<f64>() / size as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(norm < 3.0 * (d as f64 / size as f64).sqrt(), "{case}: {norm}");
            assert_eq!(pool, generate_reference_pool(case, size, 10).unwrap());
            if d == 10 {
                for j in 0..d {
                    let (_, var, _) = column_moments(pool.samples(), j);
                    assert!((var - 1.0).abs() < 0.1);
                }
            }
        }
        assert_eq!(generate_reference_pool(CaseId::Laplace, 5, 1).unwrap().dim(), 1);
    }

    #[test]
    fn pool_independent_of_stream_with_same_seed() {
        let pool = generate_reference_pool(CaseId::MeanShift, 5, 3).unwrap();
        let stream = pre_change_samples(CaseId::MeanShift, 10, 5, 3);
        assert_ne!(pool.samples(), &stream[..]);
    }

    #[test]
    fn csv_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let spec = StreamSpec::new(CaseId::Mixture, 5, 20, 11);
        let s = generate(&spec).unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_samples_csv(&a, &s, false).unwrap();
        write_samples_csv(&b, &generate(&spec).unwrap(), false).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(read_samples_csv(&a).unwrap(), s);

        write_samples_csv(&a, &s, true).unwrap();
        assert!(std::fs::read_to_string(&a).unwrap().starts_with("x1,x2,"));
        assert_eq!(read_samples_csv(&a).unwrap(), s);
    }

    #[test]
    fn csv_errors_carry_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "1,2\n3,4\n5,abc\n").unwrap();
        match read_samples_csv(&p) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "1,2\n3,4,5\n").unwrap();
        assert!(matches!(read_samples_csv(&p), Err(Error::Input(_))));
    }

    #[test]
    fn case_ids_parse() {
        for case in CaseId::BENCHMARK {
            assert_eq!(case.as_str().parse::<CaseId>().unwrap(), case);
        }
        assert!("case6".parse::<CaseId>().is_err());
    }
}
