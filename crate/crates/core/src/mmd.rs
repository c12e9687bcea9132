//! Unbiased MMD² estimation between equal-size blocks.

use crate::error::{check_same_dim, Error, Result};
use crate::kernel::KernelSpec;
use crate::Sample;

/// Where a block's samples came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOrigin {
    Reference,
    Test,
}

/// An ordered block of at least two samples of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    samples: Vec<Sample>,
    origin: BlockOrigin,
}

impl Block {
    pub fn new(samples: Vec<Sample>, origin: BlockOrigin) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Input(format!(
                "a block needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let dim = samples[0].len();
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::Input(format!(
                "block samples disagree in dimension: {} vs {dim}",
                bad.len()
            )));
        }
        Ok(Self { samples, origin })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn origin(&self) -> BlockOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

/// `h(xi, xj, yi, yj) = k(xi, xj) + k(yi, yj) - k(xi, yj) - k(xj, yi)`
pub fn h_statistic(spec: &KernelSpec, xi: &[f64], xj: &[f64], yi: &[f64], yj: &[f64]) -> Result<f64> {
    check_same_dim(xi, xj)?;
    check_same_dim(xi, yi)?;
    check_same_dim(xi, yj)?;
    Ok(h_unchecked(spec, xi, xj, yi, yj))
}

#[inline]
pub(crate) fn h_unchecked(spec: &KernelSpec, xi: &[f64], xj: &[f64], yi: &[f64], yj: &[f64]) -> f64 {
    spec.eval_unchecked(xi, xj) + spec.eval_unchecked(yi, yj)
        - spec.eval_unchecked(xi, yj)
        - spec.eval_unchecked(xj, yi)
}

/// `MMD²_u(X, Y) = (B(B-1))^{-1} Σ_{i≠j} h(x_i, x_j, y_i, y_j)`.
pub fn mmd2u_block(spec: &KernelSpec, x: &Block, y: &Block) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Input(format!(
            "block lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.dim() != y.dim() {
        return Err(Error::Input(format!(
            "block dimensions differ: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(mmd2u_unchecked(spec, x.samples(), y.samples()))
}

/// Sum over unordered pairs; `h` is symmetric under swapping `i` and `j`,
/// so each contributes twice to the ordered sum.
pub(crate) fn mmd2u_unchecked<S: AsRef<[f64]>>(spec: &KernelSpec, x: &[S], y: &[S]) -> f64 {
    let b = x.len();
    debug_assert_eq!(b, y.len());
    let mut sum = 0.0;
    for i in 0..b {
        for j in (i + 1)..b {
            sum += h_unchecked(spec, x[i].as_ref(), x[j].as_ref(), y[i].as_ref(), y[j].as_ref());
        }
    }
    2.0 * sum / (b * (b - 1)) as f64
}
