//! Null variance of the block statistic.
//!
//! Under the null, with `N` reference blocks of size `B`,
//!
//! ```text
//! Var[Z_B] = C(B,2)^{-1} ( E[h²(x,x',y,y')] / N
//!                          + (N-1)/N · Cov[h(x,x',y,y'), h(x'',x''',y,y')] )
//! ```
//!
//! with all six arguments i.i.d. from the null. Both moments are estimated
//! from 6-tuples of distinct pool indices. The tuples either come i.i.d.
//! uniformly ([`Subsampling::Random`]) or from a balanced design in which
//! every pool index is used a near-equal number of times
//! ([`Subsampling::Structured`]).

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ReferencePool;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::mmd::h_unchecked;

/// How the 6-tuples for the variance estimate are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subsampling {
    Random,
    #[default]
    Structured,
}

impl Subsampling {
    pub fn as_str(self) -> &'static str {
        match self {
            Subsampling::Random => "random",
            Subsampling::Structured => "structured",
        }
    }
}

impl std::str::FromStr for Subsampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Subsampling::Random, Subsampling::Structured]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown subsampling scheme {s:?}")))
    }
}

impl std::fmt::Display for Subsampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    /// Estimate of `E[h²(x,x',y,y')]`.
    pub e_h2: f64,
    /// Estimate of `Cov[h(x,x',y,y'), h(x'',x''',y,y')]`.
    pub cov_hh: f64,
    /// Assembled `Var[Z_B]`; always positive.
    pub combined: f64,
    pub tuples_used: usize,
}

impl VarianceEstimate {
    /// Assemble `Var[Z_B]` from the two moments.
    pub fn from_moments(
        e_h2: f64,
        cov_hh: f64,
        block_size: usize,
        n_blocks: usize,
        tuples_used: usize,
    ) -> Result<Self> {
        if block_size < 2 || n_blocks < 1 {
            return Err(Error::Config(format!(
                "block size must be >= 2 and block count >= 1, got B={block_size}, N={n_blocks}"
            )));
        }
        let pairs = (block_size * (block_size - 1) / 2) as f64;
        let n = n_blocks as f64;
        let combined = (e_h2 / n + (n - 1.0) / n * cov_hh) / pairs;
        if !(combined.is_finite() && combined > 0.0) {
            return Err(Error::Numerical(format!(
                "null variance is not positive (E[h^2]={e_h2:.6e}, cov={cov_hh:.6e}, var={combined:.6e})"
            )));
        }
        Ok(Self {
            e_h2,
            cov_hh,
            combined,
            tuples_used,
        })
    }
}

/// Estimate the null variance of the block statistic from the pool.
pub fn estimate_variance_null<R: Rng + ?Sized>(
    pool: &ReferencePool,
    kernel: &KernelSpec,
    block_size: usize,
    n_blocks: usize,
    scheme: Subsampling,
    tuples: usize,
    rng: &mut R,
) -> Result<VarianceEstimate> {
    let n = pool.len();
    if n < 6 {
        return Err(Error::Config(format!(
            "variance estimation needs at least 6 pool samples, got {n}"
        )));
    }
    if tuples < 2 {
        return Err(Error::Config(format!(
            "variance estimation needs at least 2 tuples for a covariance, got {tuples}"
        )));
    }

    let design = match scheme {
        Subsampling::Random => (0..tuples).map(|_| random_tuple(n, rng)).collect(),
        Subsampling::Structured => balanced_tuples(n, tuples, rng)?,
    };

    let s = pool.samples();
    let pairs: Vec<(f64, f64)> = design
        .iter()
        .map(|t| {
            let (x, x1, x2, x3, y, y1) = (&s[t[0]], &s[t[1]], &s[t[2]], &s[t[3]], &s[t[4]], &s[t[5]]);
            (
                h_unchecked(kernel, x, x1, y, y1),
                h_unchecked(kernel, x2, x3, y, y1),
            )
        })
        .collect();

    let (e_h2, cov_hh) = moments(&pairs);
    VarianceEstimate::from_moments(e_h2, cov_hh, block_size, n_blocks, tuples)
}

/// Second moment of h (both halves of each tuple contribute) and the
/// (m-1)-denominator covariance of the two halves.
pub(crate) fn moments(pairs: &[(f64, f64)]) -> (f64, f64) {
    let m = pairs.len() as f64;
    let e_h2 = pairs.iter().map(|(a, b)| a * a + b * b).sum::<f64>() / (2.0 * m);
    let mean_a = pairs.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_b = pairs.iter().map(|p| p.1).sum::<f64>() / m;
    let cov = pairs
        .iter()
        .map(|(a, b)| (a - mean_a) * (b - mean_b))
        .sum::<f64>()
        / (m - 1.0);
    (e_h2, cov)
}

fn random_tuple<R: Rng + ?Sized>(n: usize, rng: &mut R) -> [usize; 6] {
    let picked = index::sample(rng, n, 6);
    let mut out = [0; 6];
    for (slot, idx) in out.iter_mut().zip(picked.iter()) {
        *slot = idx;
    }
    out
}

/// Balanced design: concatenated random permutations of the pool indices,
/// cut into 6-tuples. Every index appears `floor(6m/n)` or `ceil(6m/n)`
/// times. Repeats inside one tuple (possible only where two permutations
/// meet) are removed by swapping with a position in another tuple, which
/// leaves the appearance counts untouched.
pub(crate) fn balanced_tuples<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<[usize; 6]>> {
    let total = 6 * m;
    let mut seq = Vec::with_capacity(total + n);
    let mut perm: Vec<usize> = (0..n).collect();
    while seq.len() < total {
        perm.shuffle(rng);
        seq.extend_from_slice(&perm);
    }
    seq.truncate(total);

    for c in 0..m {
        for p in 6 * c..6 * c + 6 {
            let dup = seq[6 * c..p].contains(&seq[p]);
            if !dup {
                continue;
            }
            let partner = (1..m)
                .map(|off| (c + off) % m)
                .flat_map(|other| 6 * other..6 * other + 6)
                .find(|&q| {
                    let other = q / 6;
                    let chunk = &seq[6 * c..6 * c + 6];
                    !chunk.contains(&seq[q])
                        && !(6 * other..6 * other + 6).any(|r| r != q && seq[r] == seq[p])
                });
            match partner {
                Some(q) => seq.swap(p, q),
                None => {
                    return Err(Error::Numerical(format!(
                        "could not build a balanced design of {m} tuples over {n} indices"
                    )))
                }
            }
        }
    }

    Ok(seq
        .chunks_exact(6)
        .map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]])
        .collect())
}
