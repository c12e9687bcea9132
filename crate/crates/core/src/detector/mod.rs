//! Online scan B-statistic.
//!
//! At each time `t` the most recent `B` stream samples form the test block
//! `Y`. `N` reference blocks are drawn without replacement from a pool of
//! pre-change data and the statistic is
//!
//! ```text
//! Z_t  = N^{-1} Σ_i MMD²_u(X_i, Y)
//! Z'_t = Z_t / sqrt(Var[Z_B])
//! ```
//!
//! The alarm fires at the first `t` with `Z'_t > b`.
//!
//! Kernel values are cached in Gram matrices indexed by ring-buffer slot.
//! A new stream sample only costs the kernel row of its slot: one row of
//! the window Gram plus one cross-Gram column per reference block.

mod variance;

pub use variance::{estimate_variance_null, Subsampling, VarianceEstimate};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::mmd::{Block, BlockOrigin};
use crate::seed::{rng_from, role, SimRng};
use crate::{Sample, StreamingStatistic};

/// Pre-change data the reference blocks are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePool {
    samples: Vec<Sample>,
    seed: u64,
}

impl ReferencePool {
    pub fn new(samples: Vec<Sample>, seed: u64) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Input("reference pool is empty".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Input("reference samples have dimension 0".into()));
        }
        if let Some(i) = samples.iter().position(|s| s.len() != dim) {
            return Err(Error::Input(format!(
                "reference sample {i} has dimension {}, expected {dim}",
                samples[i].len()
            )));
        }
        Ok(Self { samples, seed })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
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

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draw `n_blocks` disjoint blocks of `block_size` pool samples, without
/// replacement.
pub fn draw_reference_blocks<R: Rng + ?Sized>(
    pool: &ReferencePool,
    n_blocks: usize,
    block_size: usize,
    rng: &mut R,
) -> Result<Vec<Block>> {
    draw_block_indices(pool.len(), n_blocks, block_size, rng)?
        .into_iter()
        .map(|idx| {
            Block::new(
                idx.iter().map(|&i| pool.samples[i].clone()).collect(),
                BlockOrigin::Reference,
            )
        })
        .collect()
}

pub(crate) fn draw_block_indices<R: Rng + ?Sized>(
    pool_len: usize,
    n_blocks: usize,
    block_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let needed = n_blocks * block_size;
    if needed > pool_len {
        return Err(Error::Config(format!(
            "{n_blocks} blocks of {block_size} need {needed} pool samples, pool has {pool_len}"
        )));
    }
    let flat = index::sample(rng, pool_len, needed).into_vec();
    Ok(flat.chunks(block_size).map(<[usize]>::to_vec).collect())
}

/// What happens to the reference blocks as the stream advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReblockPolicy {
    /// Blocks are drawn once at construction.
    #[default]
    FixedAtInit,
    /// All blocks are redrawn from the pool before every statistic.
    RedrawEachStep,
    /// Each block drops its oldest sample and takes a fresh pool sample
    /// whenever the test window drops its oldest, so reference and test
    /// samples stay paired by age.
    Slide,
}

impl ReblockPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ReblockPolicy::FixedAtInit => "fixed-at-init",
            ReblockPolicy::RedrawEachStep => "redraw-each-step",
            ReblockPolicy::Slide => "slide",
        }
    }
}

impl std::str::FromStr for ReblockPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ReblockPolicy::FixedAtInit, ReblockPolicy::RedrawEachStep, ReblockPolicy::Slide]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown reblock policy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub block_size: usize,
    pub n_blocks: usize,
    pub kernel: KernelSpec,
    pub threshold: f64,
    pub subsampling: Subsampling,
    /// Number of 6-tuples used by the variance estimate.
    pub variance_tuples: usize,
    pub reblock_policy: ReblockPolicy,
}

impl DetectorConfig {
    pub fn new(block_size: usize, n_blocks: usize, kernel: KernelSpec, threshold: f64) -> Self {
        Self {
            block_size,
            n_blocks,
            kernel,
            threshold,
            subsampling: Subsampling::default(),
            variance_tuples: 10_000,
            reblock_policy: ReblockPolicy::default(),
        }
    }

    fn validate(&self, pool: &ReferencePool) -> Result<()> {
        if self.block_size < 2 {
            return Err(Error::Config(format!("block size must be >= 2, got {}", self.block_size)));
        }
        if self.n_blocks < 1 {
            return Err(Error::Config("need at least one reference block".into()));
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(Error::Config(format!("threshold must be positive, got {}", self.threshold)));
        }
        if self.variance_tuples < 2 {
            return Err(Error::Config("variance tuple budget must be >= 2".into()));
        }
        let needed = self.n_blocks * self.block_size + 6;
        if pool.len() < needed {
            return Err(Error::Config(format!(
                "pool of {} samples is smaller than N*B0 + 6 = {needed}",
                pool.len()
            )));
        }
        Ok(())
    }
}

/// Outcome of feeding one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    /// The window is not full yet; no test at this time.
    NotReady,
    Continue { statistic: f64 },
    Alarm { t: u64, statistic: f64 },
}

impl Decision {
    pub fn is_alarm(&self) -> bool {
        matches!(self, Decision::Alarm { .. })
    }

    pub fn statistic(&self) -> Option<f64> {
        match *self {
            Decision::NotReady => None,
            Decision::Continue { statistic } | Decision::Alarm { statistic, .. } => Some(statistic),
        }
    }
}

#[derive(Debug, Clone)]
struct RefBlock {
    /// Pool index held by each slot.
    pool_idx: Vec<usize>,
    /// Within-block Gram, `B x B`, row-major by slot.
    k_xx: Vec<f64>,
    /// Cross Gram, row = reference slot, column = window slot.
    k_xy: Vec<f64>,
}

/// Streaming detector state for one stream.
#[derive(Debug, Clone)]
pub struct ScanBDetector {
    config: DetectorConfig,
    pool: ReferencePool,
    variance: VarianceEstimate,
    rng: SimRng,
    blocks: Vec<RefBlock>,
    /// `in_use[i]` marks pool index `i` as held by some block (slide policy).
    in_use: Vec<bool>,
    window: Vec<Sample>,
    k_yy: Vec<f64>,
    /// Samples seen so far.
    t: u64,
    last_statistic: Option<f64>,
}

impl ScanBDetector {
    /// Build a detector, estimating the null variance from the pool.
    ///
    /// All randomness (block draws, variance tuples) is derived from the
    /// pool seed.
    pub fn new(config: DetectorConfig, pool: ReferencePool) -> Result<Self> {
        config.validate(&pool)?;
        let mut rng = rng_from(pool.seed(), &[role::VARIANCE]);
        let variance = estimate_variance_null(
            &pool,
            &config.kernel,
            config.block_size,
            config.n_blocks,
            config.subsampling,
            config.variance_tuples,
            &mut rng,
        )?;
        Self::with_variance(config, pool, variance)
    }

    /// Build a detector around an already computed variance estimate.
    pub fn with_variance(config: DetectorConfig, pool: ReferencePool, variance: VarianceEstimate) -> Result<Self> {
        config.validate(&pool)?;
        if !(variance.combined.is_finite() && variance.combined > 0.0) {
            return Err(Error::Numerical(format!(
                "variance estimate must be positive, got {}",
                variance.combined
            )));
        }
        let b = config.block_size;
        let mut rng = rng_from(pool.seed(), &[role::BLOCKS]);
        let mut in_use = vec![false; pool.len()];
        let blocks = draw_block_indices(pool.len(), config.n_blocks, b, &mut rng)?
            .into_iter()
            .map(|pool_idx| {
                for &i in &pool_idx {
                    in_use[i] = true;
                }
                let mut block = RefBlock {
                    pool_idx,
                    k_xx: vec![0.0; b * b],
                    k_xy: vec![0.0; b * b],
                };
                fill_within_gram(&config.kernel, &pool, &mut block);
                block
            })
            .collect();

        Ok(Self {
            window: Vec::with_capacity(b),
            k_yy: vec![0.0; b * b],
            config,
            pool,
            variance,
            rng,
            blocks,
            in_use,
            t: 0,
            last_statistic: None,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn variance(&self) -> &VarianceEstimate {
        &self.variance
    }

    /// Number of samples consumed.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Normalized statistic from the most recent full-window step.
    pub fn last_statistic(&self) -> Option<f64> {
        self.last_statistic
    }

    pub fn is_ready(&self) -> bool {
        self.window.len() == self.config.block_size
    }

    /// Slot holding the next incoming sample; once the window is full this
    /// is also the slot of the oldest sample.
    fn next_slot(&self) -> usize {
        (self.t % self.config.block_size as u64) as usize
    }

    /// Window slot of the sample with age rank `a` (0 = oldest).
    fn window_slot(&self, a: usize) -> usize {
        if self.is_ready() {
            (self.next_slot() + a) % self.config.block_size
        } else {
            a
        }
    }

    /// Reference slot paired with window rank `a`.
    fn reference_slot(&self, a: usize) -> usize {
        match self.config.reblock_policy {
            ReblockPolicy::Slide => self.window_slot(a),
            ReblockPolicy::FixedAtInit | ReblockPolicy::RedrawEachStep => a,
        }
    }

    /// Current test window, oldest first.
    pub fn window(&self) -> Vec<Sample> {
        (0..self.window.len())
            .map(|a| self.window[self.window_slot(a)].clone())
            .collect()
    }

    /// Current reference blocks, ordered so that element `a` pairs with
    /// element `a` of [`Self::window`].
    pub fn reference_blocks(&self) -> Vec<Block> {
        let b = self.config.block_size;
        self.blocks
            .iter()
            .map(|blk| {
                let samples = (0..b)
                    .map(|a| self.pool.samples[blk.pool_idx[self.reference_slot(a)]].clone())
                    .collect();
                Block::new(samples, BlockOrigin::Reference).expect("block size validated")
            })
            .collect()
    }

    /// Unnormalized `Z_t`, or `None` while the window is filling.
    pub fn scan_statistic(&self) -> Option<f64> {
        if !self.is_ready() {
            return None;
        }
        let b = self.config.block_size;
        let pairs: Vec<(usize, usize)> = (0..b)
            .map(|a| (self.reference_slot(a), self.window_slot(a)))
            .collect();
        let total: f64 = self
            .blocks
            .iter()
            .map(|blk| {
                let mut sum = 0.0;
                for (i, &(ri, wi)) in pairs.iter().enumerate() {
                    for &(rj, wj) in &pairs[i + 1..] {
                        sum += blk.k_xx[ri * b + rj] + self.k_yy[wi * b + wj]
                            - blk.k_xy[ri * b + wj]
                            - blk.k_xy[rj * b + wi];
                    }
                }
                2.0 * sum / (b * (b - 1)) as f64
            })
            .sum();
        Some(total / self.blocks.len() as f64)
    }

    /// Feed one sample without testing the threshold. Returns the
    /// normalized statistic when the window is full.
    pub fn observe(&mut self, sample: &[f64]) -> Result<Option<f64>> {
        if sample.len() != self.pool.dim() {
            return Err(Error::Input(format!(
                "sample has dimension {}, pool has {}",
                sample.len(),
                self.pool.dim()
            )));
        }
        let b = self.config.block_size;
        let slot = self.next_slot();
        let evicting = self.is_ready();
        if evicting {
            self.window[slot].clear();
            self.window[slot].extend_from_slice(sample);
        } else {
            self.window.push(sample.to_vec());
        }

        let kernel = self.config.kernel;
        for j in 0..self.window.len() {
            if j != slot {
                let v = kernel.eval_unchecked(&self.window[slot], &self.window[j]);
                self.k_yy[slot * b + j] = v;
                self.k_yy[j * b + slot] = v;
            }
        }
        self.t += 1;

        if evicting && self.config.reblock_policy == ReblockPolicy::Slide {
            for k in 0..self.blocks.len() {
                self.replace_reference_slot(k, slot);
            }
        }

        if self.is_ready() && self.config.reblock_policy == ReblockPolicy::RedrawEachStep {
            self.redraw_blocks()?;
        } else {
            for blk in &mut self.blocks {
                for r in 0..b {
                    blk.k_xy[r * b + slot] =
                        kernel.eval_unchecked(&self.pool.samples[blk.pool_idx[r]], &self.window[slot]);
                }
            }
        }

        self.last_statistic = self
            .scan_statistic()
            .map(|z| z / self.variance.combined.sqrt());
        Ok(self.last_statistic)
    }

    /// Feed one sample and apply the stopping rule `Z' > b`.
    pub fn step(&mut self, sample: &[f64]) -> Result<Decision> {
        Ok(match self.observe(sample)? {
            None => Decision::NotReady,
            Some(statistic) if statistic > self.config.threshold => Decision::Alarm { t: self.t, statistic },
            Some(statistic) => Decision::Continue { statistic },
        })
    }

    /// Swap the pool sample in `slot` of block `k` for an unused one and
    /// refresh the affected Gram rows.
    fn replace_reference_slot(&mut self, k: usize, slot: usize) {
        let b = self.config.block_size;
        let fresh = loop {
            let i = self.rng.random_range(0..self.pool.len());
            if !self.in_use[i] {
                break i;
            }
        };
        let old = std::mem::replace(&mut self.blocks[k].pool_idx[slot], fresh);
        self.in_use[fresh] = true;
        self.in_use[old] = false;

        let kernel = self.config.kernel;
        let blk = &mut self.blocks[k];
        let x_new = &self.pool.samples[fresh];
        for r in 0..b {
            if r != slot {
                let v = kernel.eval_unchecked(x_new, &self.pool.samples[blk.pool_idx[r]]);
                blk.k_xx[slot * b + r] = v;
                blk.k_xx[r * b + slot] = v;
            }
        }
        for w in 0..self.window.len() {
            blk.k_xy[slot * b + w] = kernel.eval_unchecked(x_new, &self.window[w]);
        }
    }

    fn redraw_blocks(&mut self) -> Result<()> {
        let b = self.config.block_size;
        let draws = draw_block_indices(self.pool.len(), self.config.n_blocks, b, &mut self.rng)?;
        let kernel = self.config.kernel;
        for (blk, pool_idx) in self.blocks.iter_mut().zip(draws) {
            blk.pool_idx = pool_idx;
            fill_within_gram(&kernel, &self.pool, blk);
            for r in 0..b {
                let x = &self.pool.samples[blk.pool_idx[r]];
                for (w, y) in self.window.iter().enumerate() {
                    blk.k_xy[r * b + w] = kernel.eval_unchecked(x, y);
                }
            }
        }
        Ok(())
    }
}

impl StreamingStatistic for ScanBDetector {
    fn observe(&mut self, sample: &[f64]) -> Result<Option<f64>> {
        ScanBDetector::observe(self, sample)
    }
}

fn fill_within_gram(kernel: &KernelSpec, pool: &ReferencePool, blk: &mut RefBlock) {
    let b = blk.pool_idx.len();
    for i in 0..b {
        for j in (i + 1)..b {
            let v = kernel.eval_unchecked(&pool.samples[blk.pool_idx[i]], &pool.samples[blk.pool_idx[j]]);
            blk.k_xx[i * b + j] = v;
            blk.k_xx[j * b + i] = v;
        }
    }
}
