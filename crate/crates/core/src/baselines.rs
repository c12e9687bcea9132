//! Parametric comparison statistics.
//!
//! * Hotelling's T² of the last `B0` samples against a reference Gaussian
//!   fit: `T² = B0 (x̄ - μ₀)ᵀ Σ₀⁻¹ (x̄ - μ₀)`.
//! * A windowed Gaussian GLR comparing one Gaussian for the whole history
//!   against separate Gaussians before and inside the last `B0` samples:
//!
//!   ```text
//!   l(t) = t log|Σ̂_{1:t}| - (t-B0) log|Σ̂_{1:t-B0}| - B0 log|Σ̂_{t-B0+1:t}|
//!   ```
//!
//!   with maximum-likelihood (1/n) covariances about each segment's mean.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::detector::Decision;
use crate::error::{Error, Result};
use crate::{Sample, StreamingStatistic};

/// Reference mean and covariance for Hotelling's T².
#[derive(Debug, Clone)]
pub struct GaussianReference {
    mu0: DVector<f64>,
    sigma0: DMatrix<f64>,
    sigma0_inverse: DMatrix<f64>,
}

impl GaussianReference {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mu0
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    pub fn covariance_inverse(&self) -> &DMatrix<f64> {
        &self.sigma0_inverse
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }
}

fn check_rows(samples: &[Sample]) -> Result<usize> {
    let dim = samples
        .first()
        .ok_or_else(|| Error::Input("no samples".into()))?
        .len();
    if let Some(i) = samples.iter().position(|s| s.len() != dim) {
        return Err(Error::Input(format!(
            "sample {i} has dimension {}, expected {dim}",
            samples[i].len()
        )));
    }
    Ok(dim)
}

fn mean_of(samples: &[Sample], dim: usize) -> DVector<f64> {
    let mut m = DVector::zeros(dim);
    for s in samples {
        m += DVector::from_column_slice(s);
    }
    m / samples.len() as f64
}

/// Scatter matrix `Σ (x - m)(x - m)ᵀ`.
fn scatter(samples: &[Sample], mean: &DVector<f64>) -> DMatrix<f64> {
    let dim = mean.len();
    let mut s = DMatrix::zeros(dim, dim);
    for x in samples {
        let c = DVector::from_column_slice(x) - mean;
        s.ger(1.0, &c, &c, 1.0);
    }
    s
}

fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::DegenerateData(format!("{what} covariance is singular")))
}

fn log_det_spd(m: DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = cholesky(m, what)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Sample mean and (n-1)-denominator covariance of the reference data.
pub fn fit_reference(samples: &[Sample]) -> Result<GaussianReference> {
    let dim = check_rows(samples)?;
    let n = samples.len();
    if n <= dim {
        return Err(Error::DegenerateData(format!(
            "{n} samples cannot give a nonsingular {dim}x{dim} covariance"
        )));
    }
    let mu0 = mean_of(samples, dim);
    let sigma0 = scatter(samples, &mu0) / (n - 1) as f64;
    let sigma0_inverse = cholesky(sigma0.clone(), "reference")?.inverse();
    Ok(GaussianReference {
        mu0,
        sigma0,
        sigma0_inverse,
    })
}

fn quadratic_form(inv: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * inv * v)[(0, 0)]
}

/// Hotelling's T² of a window against the reference fit.
pub fn hotelling_t2(window: &[Sample], reference: &GaussianReference) -> Result<f64> {
    let dim = check_rows(window)?;
    if dim != reference.dim() {
        return Err(Error::Input(format!(
            "window dimension {dim} differs from reference dimension {}",
            reference.dim()
        )));
    }
    let diff = mean_of(window, dim) - &reference.mu0;
    Ok((window.len() as f64 * quadratic_form(&reference.sigma0_inverse, &diff)).max(0.0))
}

/// Windowed Gaussian GLR at `t = history.len()`.
pub fn glr_stat(history: &[Sample], block_size: usize) -> Result<f64> {
    let dim = check_rows(history)?;
    let t = history.len();
    if block_size < 2 {
        return Err(Error::Input(format!("block size must be >= 2, got {block_size}")));
    }
    if t <= block_size + dim {
        return Err(Error::Input(format!(
            "GLR needs more than B0 + d = {} samples, got {t}",
            block_size + dim
        )));
    }
    let ml_log_det = |seg: &[Sample], what: &str| -> Result<f64> {
        let m = mean_of(seg, dim);
        log_det_spd(scatter(seg, &m) / seg.len() as f64, what)
    };
    let all = ml_log_det(history, "full-history")?;
    let pre = ml_log_det(&history[..t - block_size], "pre-window")?;
    let win = ml_log_det(&history[t - block_size..], "window")?;
    Ok(t as f64 * all - (t - block_size) as f64 * pre - block_size as f64 * win)
}

/// Ring buffer of the last `capacity` samples, oldest first on read.
#[derive(Debug, Clone)]
struct Window {
    capacity: usize,
    buf: Vec<Sample>,
    next: usize,
}

impl Window {
    fn new(capacity: usize) -> Self {
        Self {
            capacity,
            buf: Vec::with_capacity(capacity),
            next: 0,
        }
    }

    fn is_full(&self) -> bool {
        self.buf.len() == self.capacity
    }

    /// Push a sample, returning the evicted one.
    fn push(&mut self, s: &[f64]) -> Option<Sample> {
        if self.is_full() {
            let old = std::mem::replace(&mut self.buf[self.next], s.to_vec());
            self.next = (self.next + 1) % self.capacity;
            Some(old)
        } else {
            self.buf.push(s.to_vec());
            None
        }
    }

    fn samples(&self) -> &[Sample] {
        &self.buf
    }
}

fn check_dim(sample: &[f64], dim: usize) -> Result<()> {
    if sample.len() != dim {
        return Err(Error::Input(format!(
            "sample has dimension {}, expected {dim}",
            sample.len()
        )));
    }
    Ok(())
}

/// Streaming Hotelling's T² over the last `B0` samples.
#[derive(Debug, Clone)]
pub struct HotellingMonitor {
    reference: GaussianReference,
    window: Window,
}

impl HotellingMonitor {
    pub fn new(reference: GaussianReference, block_size: usize) -> Result<Self> {
        if block_size < 1 {
            return Err(Error::Input("block size must be positive".into()));
        }
        Ok(Self {
            reference,
            window: Window::new(block_size),
        })
    }
}

impl StreamingStatistic for HotellingMonitor {
    fn observe(&mut self, sample: &[f64]) -> Result<Option<f64>> {
        check_dim(sample, self.reference.dim())?;
        self.window.push(sample);
        if !self.window.is_full() {
            return Ok(None);
        }
        hotelling_t2(self.window.samples(), &self.reference).map(Some)
    }
}

/// Streaming windowed GLR.
///
/// The full-history moments are kept as running sums; the window
/// covariance is recomputed exactly from the window each step, and the
/// pre-window moments are the difference of the two.
#[derive(Debug, Clone)]
pub struct GlrMonitor {
    block_size: usize,
    dim: usize,
    n: usize,
    sum: DVector<f64>,
    sum_sq: DMatrix<f64>,
    window: Window,
}

impl GlrMonitor {
    /// Start a monitor whose history begins with `prefix` (typically the
    /// reference data). The prefix may be empty if `dim` is given.
    pub fn new(block_size: usize, dim: usize, prefix: &[Sample]) -> Result<Self> {
        if block_size < 2 {
            return Err(Error::Input(format!("block size must be >= 2, got {block_size}")));
        }
        if dim == 0 {
            return Err(Error::Input("dimension must be positive".into()));
        }
        let mut m = Self {
            block_size,
            dim,
            n: 0,
            sum: DVector::zeros(dim),
            sum_sq: DMatrix::zeros(dim, dim),
            window: Window::new(block_size),
        };
        for s in prefix {
            m.push(s)?;
        }
        Ok(m)
    }

    fn push(&mut self, sample: &[f64]) -> Result<()> {
        check_dim(sample, self.dim)?;
        let x = DVector::from_column_slice(sample);
        self.sum += &x;
        self.sum_sq.ger(1.0, &x, &x, 1.0);
        self.n += 1;
        self.window.push(sample);
        Ok(())
    }

    fn ml_log_det_from_sums(n: usize, sum: &DVector<f64>, sum_sq: &DMatrix<f64>, what: &str) -> Result<f64> {
        let nf = n as f64;
        let mean = sum / nf;
        let mut cov = sum_sq / nf;
        cov.ger(-1.0, &mean, &mean, 1.0);
        log_det_spd(cov, what)
    }

    /// Current statistic, or `None` before `B0 + d` samples.
    pub fn value(&self) -> Result<Option<f64>> {
        let (t, b) = (self.n, self.block_size);
        if t <= b + self.dim || !self.window.is_full() {
            return Ok(None);
        }
        let win = self.window.samples();
        let mut win_sum = DVector::zeros(self.dim);
        let mut win_sq = DMatrix::zeros(self.dim, self.dim);
        for s in win {
            let x = DVector::from_column_slice(s);
            win_sum += &x;
            win_sq.ger(1.0, &x, &x, 1.0);
        }
        let win_mean = &win_sum / b as f64;
        let win_ld = log_det_spd(scatter(win, &win_mean) / b as f64, "window")?;
        let all_ld = Self::ml_log_det_from_sums(t, &self.sum, &self.sum_sq, "full-history")?;
        let pre_ld = Self::ml_log_det_from_sums(t - b, &(&self.sum - &win_sum), &(&self.sum_sq - &win_sq), "pre-window")?;
        Ok(Some(t as f64 * all_ld - (t - b) as f64 * pre_ld - b as f64 * win_ld))
    }
}

impl StreamingStatistic for GlrMonitor {
    fn observe(&mut self, sample: &[f64]) -> Result<Option<f64>> {
        self.push(sample)?;
        self.value()
    }
}

/// Any streaming statistic with the stopping rule `statistic > threshold`.
#[derive(Debug, Clone)]
pub struct Thresholded<S> {
    statistic: S,
    threshold: f64,
    t: u64,
}

impl<S: StreamingStatistic> Thresholded<S> {
    pub fn new(statistic: S, threshold: f64) -> Self {
        Self {
            statistic,
            threshold,
            t: 0,
        }
    }

    pub fn step(&mut self, sample: &[f64]) -> Result<Decision> {
        let v = self.statistic.observe(sample)?;
        self.t += 1;
        Ok(match v {
            None => Decision::NotReady,
            Some(statistic) if statistic > self.threshold => Decision::Alarm { t: self.t, statistic },
            Some(statistic) => Decision::Continue { statistic },
        })
    }

    pub fn inner(&self) -> &S {
        &self.statistic
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> Vec<Sample> {
        let mut rng = rng_from(seed, &[]);
        (0..n)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn equal_samples_are_singular() {
        let s = vec![vec![1.0, 2.0]; 10];
        assert!(matches!(fit_reference(&s), Err(Error::DegenerateData(_))));
        assert!(matches!(fit_reference(&gaussian(3, 3, 1)), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn scalar_fit_by_hand() {
        let r = fit_reference(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(r.mean()[0], 1.0);
        assert_eq!(r.covariance()[(0, 0)], 2.0);
    }

    #[test]
    fn fit_is_permutation_invariant() {
        let mut s = gaussian(50, 3, 2);
        let a = fit_reference(&s).unwrap();
        s.reverse();
        s.swap(3, 17);
        let b = fit_reference(&s).unwrap();
        assert!((a.mean() - b.mean()).amax() < 1e-12);
        assert!((a.covariance() - b.covariance()).amax() < 1e-12);
    }

    #[test]
    fn t2_zero_at_reference_mean() {
        let r = fit_reference(&gaussian(100, 2, 3)).unwrap();
        let m = r.mean().as_slice().to_vec();
        assert!(hotelling_t2(&vec![m; 20], &r).unwrap().abs() < 1e-20);
    }

    #[test]
    fn t2_direct_formula() {
        let r = GaussianReference {
            mu0: DVector::from_element(1, 0.0),
            sigma0: DMatrix::identity(1, 1),
            sigma0_inverse: DMatrix::identity(1, 1),
        };
        let window = vec![vec![0.5]; 20];
        assert_relative_eq!(hotelling_t2(&window, &r).unwrap(), 5.0, max_relative = 1e-14);
        assert!(hotelling_t2(&[vec![0.5, 1.0]], &r).is_err());
    }

    #[test]
    fn t2_matches_linear_solve() {
        let r = fit_reference(&gaussian(200, 4, 4)).unwrap();
        for seed in 0..20 {
            let w: Vec<Sample> = gaussian(20, 4, 100 + seed)
                .into_iter()
                .map(|s| s.iter().map(|v| v + 0.3).collect())
                .collect();
            let diff = mean_of(&w, 4) - r.mean();
            let solved = r.covariance().clone().lu().solve(&diff).unwrap();
            let oracle = 20.0 * diff.dot(&solved);
            assert!((hotelling_t2(&w, &r).unwrap() - oracle).abs() < 1e-8);
        }
    }

    #[test]
    fn glr_zero_for_repeated_segment() {
        // The window repeats the pre-window segment exactly: all three ML
        // covariances coincide.
        let seg = gaussian(10, 1, 5);
        let history: Vec<Sample> = seg.iter().chain(seg.iter()).cloned().collect();
        assert!(glr_stat(&history, 10).unwrap().abs() < 1e-8);
    }

    #[test]
    fn glr_matches_independent_log_det() {
        let history = gaussian(30, 1, 6);
        let var_ml = |s: &[Sample]| {
            let m = s.iter().map(|x| x[0]).sum::<f64>() / s.len() as f64;
            s.iter().map(|x| (x[0] - m).powi(2)).sum::<f64>() / s.len() as f64
        };
        let oracle = 30.0 * var_ml(&history).ln()
            - 20.0 * var_ml(&history[..20]).ln()
            - 10.0 * var_ml(&history[20..]).ln();
        assert_relative_eq!(glr_stat(&history, 10).unwrap(), oracle, max_relative = 1e-10);
    }

    #[test]
    fn glr_requires_enough_history() {
        assert!(glr_stat(&gaussian(13, 3, 7), 10).is_err());
        assert!(glr_stat(&gaussian(14, 3, 7), 10).is_ok());
    }

    #[test]
    fn glr_nonnegative_on_null_histories() {
        for seed in 0..1000u64 {
            let d = 1 + (seed % 3) as usize;
            let n = 30 + (seed % 50) as usize;
            let v = glr_stat(&gaussian(n, d, 1000 + seed), 10).unwrap();
            assert!(v >= -1e-6, "seed {seed}: {v}");
        }
    }

    #[test]
    fn streaming_glr_matches_batch() {
        let prefix = gaussian(40, 3, 8);
        let stream = gaussian(60, 3, 9);
        let mut m = GlrMonitor::new(10, 3, &prefix).unwrap();
        let mut history = prefix.clone();
        for s in &stream {
            history.push(s.clone());
            let v = m.observe(s).unwrap().unwrap();
            let batch = glr_stat(&history, 10).unwrap();
            assert!((v - batch).abs() < 1e-7 * (1.0 + batch.abs()), "{v} vs {batch}");
        }
    }

    #[test]
    fn streaming_glr_not_ready_without_history() {
        let mut m = GlrMonitor::new(5, 2, &[]).unwrap();
        let s = gaussian(20, 2, 10);
        for x in &s[..7] {
            assert!(m.observe(x).unwrap().is_none());
        }
        assert!(m.observe(&s[7]).unwrap().is_some());
    }

    #[test]
    fn streaming_t2_matches_batch() {
        let r = fit_reference(&gaussian(100, 2, 11)).unwrap();
        let mut m = HotellingMonitor::new(r.clone(), 5).unwrap();
        let s = gaussian(30, 2, 12);
        for (i, x) in s.iter().enumerate() {
            let v = m.observe(x).unwrap();
            if i < 4 {
                assert!(v.is_none());
            } else {
                let batch = hotelling_t2(&s[i - 4..=i], &r).unwrap();
                assert!((v.unwrap() - batch).abs() < 1e-10);
            }
        }
        assert!(m.observe(&[1.0]).is_err());
    }

    #[test]
    fn thresholded_uses_strict_inequality() {
        struct Const(f64);
        impl StreamingStatistic for Const {
            fn observe(&mut self, _: &[f64]) -> Result<Option<f64>> {
                Ok(Some(self.0))
            }
        }
        let mut at = Thresholded::new(Const(2.0), 2.0);
        assert_eq!(at.step(&[0.0]).unwrap(), Decision::Continue { statistic: 2.0 });
        let mut above = Thresholded::new(Const(2.0 + 1e-12), 2.0);
        assert!(above.step(&[0.0]).unwrap().is_alarm());
    }

    fn invertible_3x3() -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-2.0f64..2.0, 9).prop_filter_map("ill-conditioned", |v| {
            let a = DMatrix::from_row_slice(3, 3, &v) + DMatrix::identity(3, 3) * 0.5;
            let svd = a.clone().svd(false, false);
            let (max, min) = (svd.singular_values.max(), svd.singular_values.min());
            (min > 0.1 && max / min < 50.0).then_some(a)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn t2_affine_invariant(a in invertible_3x3(), shift in proptest::collection::vec(-3.0f64..3.0, 3), seed in 0u64..1000) {
            let refs = gaussian(60, 3, seed);
            let window: Vec<Sample> = gaussian(20, 3, seed + 5000)
                .into_iter()
                .map(|s| s.iter().map(|v| v + 0.4).collect())
                .collect();
            let b = DVector::from_vec(shift);
            let map = |s: &Sample| -> Sample { (&a * DVector::from_column_slice(s) + &b).as_slice().to_vec() };
            let base = hotelling_t2(&window, &fit_reference(&refs).unwrap()).unwrap();
            let r2 = fit_reference(&refs.iter().map(map).collect::<Vec<_>>()).unwrap();
            let moved = hotelling_t2(&window.iter().map(map).collect::<Vec<_>>(), &r2).unwrap();
            prop_assert!((base - moved).abs() <= 1e-6 * (1.0 + base));
            prop_assert!(base >= 0.0);
        }
    }
}
