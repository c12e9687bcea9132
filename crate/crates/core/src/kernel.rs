//! Reproducing kernels and the median bandwidth heuristic.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_same_dim, Error, Result};

/// Kernel families supported by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    GaussianRbf,
    LaplacianRbf,
    Polynomial,
}

impl KernelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelFamily::GaussianRbf => "gaussian-rbf",
            KernelFamily::LaplacianRbf => "laplacian-rbf",
            KernelFamily::Polynomial => "polynomial",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [KernelFamily::GaussianRbf, KernelFamily::LaplacianRbf, KernelFamily::Polynomial]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown kernel family {s:?}")))
    }
}

/// A kernel family together with validated parameters.
///
/// Construct through [`KernelSpec::gaussian`], [`KernelSpec::laplacian`] or
/// [`KernelSpec::polynomial`]; the fields are private so an invalid spec
/// cannot be built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    kind: Kind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Gaussian { inv_two_sigma_sq: f64, sigma: f64 },
    Laplacian { inv_sigma: f64, sigma: f64 },
    Polynomial { offset: f64, degree: u32 },
}

fn check_bandwidth(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Input(format!("bandwidth must be positive and finite, got {sigma}")));
    }
    Ok(())
}

impl KernelSpec {
    /// `k(x, y) = exp(-|x - y|^2 / (2 sigma^2))`
    pub fn gaussian(sigma: f64) -> Result<Self> {
        check_bandwidth(sigma)?;
        Ok(Self {
            kind: Kind::Gaussian {
                inv_two_sigma_sq: 1.0 / (2.0 * sigma * sigma),
                sigma,
            },
        })
    }

    /// `k(x, y) = exp(-|x - y| / sigma)`
    pub fn laplacian(sigma: f64) -> Result<Self> {
        check_bandwidth(sigma)?;
        Ok(Self {
            kind: Kind::Laplacian {
                inv_sigma: 1.0 / sigma,
                sigma,
            },
        })
    }

    /// `k(x, y) = (<x, y> + a)^d`
    pub fn polynomial(offset: f64, degree: u32) -> Result<Self> {
        if !(offset.is_finite() && offset > 0.0) {
            return Err(Error::Input(format!("polynomial offset must be positive, got {offset}")));
        }
        if degree == 0 {
            return Err(Error::Input("polynomial degree must be at least 1".into()));
        }
        Ok(Self {
            kind: Kind::Polynomial { offset, degree },
        })
    }

    /// Build an RBF kernel of the given family from a bandwidth.
    pub fn rbf(family: KernelFamily, sigma: f64) -> Result<Self> {
        match family {
            KernelFamily::GaussianRbf => Self::gaussian(sigma),
            KernelFamily::LaplacianRbf => Self::laplacian(sigma),
            KernelFamily::Polynomial => Err(Error::Input(
                "polynomial kernel has no bandwidth; use KernelSpec::polynomial".into(),
            )),
        }
    }

    pub fn family(&self) -> KernelFamily {
        match self.kind {
            Kind::Gaussian { .. } => KernelFamily::GaussianRbf,
            Kind::Laplacian { .. } => KernelFamily::LaplacianRbf,
            Kind::Polynomial { .. } => KernelFamily::Polynomial,
        }
    }

    /// Bandwidth for the RBF families.
    pub fn bandwidth(&self) -> Option<f64> {
        match self.kind {
            Kind::Gaussian { sigma, .. } | Kind::Laplacian { sigma, .. } => Some(sigma),
            Kind::Polynomial { .. } => None,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_same_dim(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Kernel value without the dimension check. Callers guarantee
    /// `x.len() == y.len()`.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.kind {
            Kind::Gaussian { inv_two_sigma_sq, .. } => (-squared_distance(x, y) * inv_two_sigma_sq).exp(),
            Kind::Laplacian { inv_sigma, .. } => (-squared_distance(x, y).sqrt() * inv_sigma).exp(),
            Kind::Polynomial { offset, degree } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (dot + offset).powi(degree as i32)
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            Kind::Gaussian { sigma, .. } | Kind::Laplacian { sigma, .. } => {
                write!(f, "{}(sigma={sigma})", self.family())
            }
            Kind::Polynomial { offset, degree } => write!(f, "polynomial(a={offset}, d={degree})"),
        }
    }
}

#[inline]
pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median of all pairwise Euclidean distances among `samples`.
///
/// With an even number of pairs the midpoint of the two central order
/// statistics is returned. A zero median is rejected instead of floored so
/// that the caller can supply an explicit bandwidth.
pub fn median_bandwidth<S: AsRef<[f64]>>(samples: &[S]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Input(format!(
            "median bandwidth needs at least 2 samples, got {n}"
        )));
    }
    let dim = samples[0].as_ref().len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for (i, a) in samples.iter().enumerate() {
        let a = a.as_ref();
        if a.len() != dim {
            return Err(Error::Input(format!(
                "dimension mismatch in sample {i}: {} vs {dim}",
                a.len()
            )));
        }
        for b in &samples[i + 1..] {
            dists.push(squared_distance(a, b.as_ref()).sqrt());
        }
    }
    if dists.iter().any(|d| d.is_nan()) {
        return Err(Error::Input("samples contain NaN".into()));
    }

    let m = dists.len();
    let upper_idx = m / 2;
    let (lower, &mut upper, _) = dists.select_nth_unstable_by(upper_idx, f64::total_cmp);
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    };

    if median <= 0.0 {
        return Err(Error::DegenerateData(
            "median pairwise distance is zero; supply an explicit bandwidth".into(),
        ));
    }
    Ok(median)
}
