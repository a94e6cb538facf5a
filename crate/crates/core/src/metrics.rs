//! Evaluation metrics for sampled time-to-event predictions.
//!
//! A model is evaluated through the [`TimeSampler`] trait: it only has to
//! produce draws `t_ns` for each test subject. Point predictions for the
//! C-index are per-subject medians; calibration compares the test KM curve
//! against the distribution-based KM curve built from Gaussian-KDE CDFs of
//! the draws.

use log::warn;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SurvDataset;
use crate::estimators::{distinct_times, dkm, km, CdfMatrix, EstimatorError, SurvivalCurve};
use crate::tensor::{normal_cdf, TensorError};

/// Number of draws per subject used by [`evaluate`] unless overridden.
pub const DEFAULT_DRAWS: usize = 200;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("need at least {needed} draws per subject, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("subject {0} has zero mean predicted time")]
    ZeroMean(usize),
    #[error("no uncensored subjects")]
    NoEvents,
    #[error("calibration grids differ")]
    GridMismatch,
    #[error("calibration slope needs at least two points with non-constant x")]
    DegenerateRegression,
    #[error("sample sets must be non-empty and of equal size ({0} vs {1})")]
    SampleSizeMismatch(usize, usize),
    #[error("samples must be finite and non-negative")]
    InvalidSamples,
    #[error("sampler failed: {0}")]
    Sampler(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Draws from a predictive distribution: `N` subjects x `S` draws.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSamples(Array2<f64>);

impl TimeSamples {
    pub fn new(values: Array2<f64>) -> Result<Self, MetricsError> {
        if values.ncols() == 0 {
            return Err(MetricsError::TooFewDraws { needed: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(MetricsError::InvalidSamples);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn subjects(&self) -> usize {
        self.0.nrows()
    }

    pub fn draws(&self) -> usize {
        self.0.ncols()
    }

    pub fn medians(&self) -> Vec<f64> {
        self.0
            .rows()
            .into_iter()
            .map(|r| {
                let mut v = r.to_vec();
                quantile_sorted(sort(&mut v), 0.5)
            })
            .collect()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, MetricsError> {
        Self::new(self.0.mapv(|v| v * factor))
    }
}

/// Anything that can draw event times for a covariate matrix.
pub trait TimeSampler {
    fn sample_times(
        &self,
        x: ArrayView2<f64>,
        draws: usize,
        seed: u64,
    ) -> Result<TimeSamples, MetricsError>;
}

fn sort(v: &mut [f64]) -> &[f64] {
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of a sorted, non-empty slice.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Harrell's C-index. `pred` are time-like scores (smaller = earlier event).
/// A pair `(a, b)` is comparable when `t_a < t_b` and `a` had an event;
/// prediction ties score 1/2.
pub fn c_index(pred: &[f64], t: &[f64], y: &[bool]) -> Result<f64, MetricsError> {
    if pred.len() != t.len() || y.len() != t.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "pred {}, t {}, y {}",
            pred.len(),
            t.len(),
            y.len()
        )));
    }
    let mut comparable = 0u64;
    let mut score = 0u64; // in half-credits
    for a in 0..t.len() {
        if !y[a] {
            continue;
        }
        for b in 0..t.len() {
            if t[a] < t[b] {
                comparable += 1;
                if pred[a] < pred[b] {
                    score += 2;
                } else if pred[a] == pred[b] {
                    score += 1;
                }
            }
        }
    }
    if comparable == 0 {
        return Err(MetricsError::NoComparablePairs);
    }
    Ok(score as f64 / (2 * comparable) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovStats {
    pub per_subject: Vec<f64>,
    pub mean: f64,
}

/// Per-subject coefficient of variation (population std over mean) and its average.
pub fn cov_stats(samples: &TimeSamples) -> Result<CovStats, MetricsError> {
    if samples.draws() < 2 {
        return Err(MetricsError::TooFewDraws {
            needed: 2,
            got: samples.draws(),
        });
    }
    let mut per_subject = Vec::with_capacity(samples.subjects());
    for (n, row) in samples.values().rows().into_iter().enumerate() {
        let s = row.len() as f64;
        let mu = row.sum() / s;
        if mu == 0.0 {
            return Err(MetricsError::ZeroMean(n));
        }
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / s;
        per_subject.push(var.sqrt() / mu);
    }
    let mean = per_subject.iter().sum::<f64>() / per_subject.len().max(1) as f64;
    Ok(CovStats { per_subject, mean })
}

/// Fraction of uncensored subjects whose observed time lies inside the
/// central 95% interval of their draws.
pub fn coverage95(samples: &TimeSamples, t: &[f64], y: &[bool]) -> Result<f64, MetricsError> {
    if samples.draws() < 40 {
        return Err(MetricsError::TooFewDraws {
            needed: 40,
            got: samples.draws(),
        });
    }
    if samples.subjects() != t.len() || y.len() != t.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "samples {}, t {}, y {}",
            samples.subjects(),
            t.len(),
            y.len()
        )));
    }
    let mut events = 0usize;
    let mut covered = 0usize;
    let mut buf = Vec::with_capacity(samples.draws());
    for (n, row) in samples.values().rows().into_iter().enumerate() {
        if !y[n] {
            continue;
        }
        events += 1;
        buf.clear();
        buf.extend(row.iter().copied());
        let sorted = sort(&mut buf);
        let (lo, hi) = (quantile_sorted(sorted, 0.025), quantile_sorted(sorted, 0.975));
        if (lo..=hi).contains(&t[n]) {
            covered += 1;
        }
    }
    if events == 0 {
        return Err(MetricsError::NoEvents);
    }
    Ok(covered as f64 / events as f64)
}

/// Silverman's rule of thumb `1.06 sigma S^(-1/5)`, floored at
/// `1e-6 * range`. Returns 0 when all samples coincide.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    (1.06 * sd * n.powf(-0.2)).max(1e-6 * (max - min))
}

/// Gaussian-KDE CDF of `samples` on `grid`: `mean_s Phi((t - t_s) / h)`.
///
/// Kernels more than nine bandwidths away contribute exactly 0 or 1.
pub fn kde_cdf(samples: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Vec<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    kde_cdf_sorted(&sorted, grid, bandwidth)
}

fn kde_cdf_sorted(sorted: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Vec<f64> {
    let n = sorted.len();
    if n == 0 {
        return vec![0.0; grid.len()];
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(sorted));
    if !(h > 0.0) {
        warn!("KDE bandwidth is zero; falling back to the empirical step CDF");
        return grid
            .iter()
            .map(|&g| sorted.partition_point(|&v| v <= g) as f64 / n as f64)
            .collect();
    }
    let reach = 9.0 * h;
    grid.iter()
        .map(|&g| {
            let full = sorted.partition_point(|&v| v < g - reach);
            let end = sorted.partition_point(|&v| v <= g + reach);
            let partial: f64 = sorted[full..end].iter().map(|&s| normal_cdf((g - s) / h)).sum();
            ((full as f64 + partial) / n as f64).clamp(0.0, 1.0)
        })
        .collect()
}

/// Row-wise KDE CDFs, each row with its own Silverman bandwidth.
pub fn kde_cdf_matrix(samples: &TimeSamples, grid: &[f64]) -> Result<CdfMatrix, MetricsError> {
    let mut out = Array2::zeros((samples.subjects(), grid.len()));
    let mut buf = Vec::with_capacity(samples.draws());
    for (n, row) in samples.values().rows().into_iter().enumerate() {
        buf.clear();
        buf.extend(row.iter().copied());
        buf.sort_by(f64::total_cmp);
        for (i, v) in kde_cdf_sorted(&buf, grid, None).into_iter().enumerate() {
            out[[n, i]] = v;
        }
    }
    Ok(CdfMatrix::new(out)?)
}

/// Points `(1 - S_KM(t_i), 1 - S_model(t_i))` over the shared grid.
pub fn calibration_curve(
    model_curve: &SurvivalCurve,
    gt_curve: &SurvivalCurve,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    if model_curve.grid != gt_curve.grid {
        return Err(MetricsError::GridMismatch);
    }
    Ok(gt_curve
        .survival
        .iter()
        .zip(&model_curve.survival)
        .map(|(g, m)| (1.0 - g, 1.0 - m))
        .collect())
}

/// Ordinary least-squares slope of `y` on `x` with a free intercept.
pub fn calibration_slope(points: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::DegenerateRegression);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(MetricsError::DegenerateRegression);
    }
    Ok(sxy / sxx)
}

/// One-dimensional earth mover's distance between equal-size sample sets:
/// mean absolute difference of the sorted samples.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.is_empty() || a.len() != b.len() {
        return Err(MetricsError::SampleSizeMismatch(a.len(), b.len()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Covariate-blind sampler: every subject gets the same distribution `Q`,
/// chosen so that the censoring-aware estimator reproduces the training KM.
///
/// The distribution-based estimator only counts predicted mass of uncensored
/// subjects, so a shared `Q` yields hazard `p_event * h_Q`. `Q` therefore uses
/// the KM hazards divided by the training event fraction (capped at 1). Mass
/// left after the last grid time is placed at `1.5 * t_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSampler {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub tail_time: f64,
}

impl MarginalSampler {
    pub fn fit(t: &[f64], y: &[bool]) -> Result<Self, MetricsError> {
        let curve = km(t, y)?;
        let events = y.iter().filter(|&&e| e).count();
        if events == 0 {
            return Err(MetricsError::NoEvents);
        }
        let p_event = events as f64 / t.len() as f64;
        let (at_risk, d) = (curve.at_risk.as_ref().unwrap(), curve.events.as_ref().unwrap());
        let mut s = 1.0;
        let survival = at_risk
            .iter()
            .zip(d)
            .map(|(&n, &d)| {
                let h = (d as f64 / n as f64 / p_event).min(1.0);
                s *= 1.0 - h;
                s
            })
            .collect();
        let t_max = *curve.grid.last().expect("non-empty curve");
        Ok(Self {
            times: curve.grid,
            survival,
            tail_time: if t_max > 0.0 { 1.5 * t_max } else { 1.0 },
        })
    }

    fn quantile(&self, u: f64) -> f64 {
        // First grid time where the survival drops below u.
        let k = self.survival.partition_point(|&s| s >= u);
        self.times.get(k).copied().unwrap_or(self.tail_time)
    }
}

impl TimeSampler for MarginalSampler {
    fn sample_times(
        &self,
        x: ArrayView2<f64>,
        draws: usize,
        seed: u64,
    ) -> Result<TimeSamples, MetricsError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = Array2::from_shape_simple_fn((x.nrows(), draws), || {
            self.quantile(1.0 - rng.random::<f64>())
        });
        TimeSamples::new(out)
    }
}

/// Wraps a sampler and multiplies every draw by a constant.
pub struct Scaled<'a> {
    pub inner: &'a dyn TimeSampler,
    pub factor: f64,
}

impl TimeSampler for Scaled<'_> {
    fn sample_times(
        &self,
        x: ArrayView2<f64>,
        draws: usize,
        seed: u64,
    ) -> Result<TimeSamples, MetricsError> {
        self.inner.sample_times(x, draws, seed)?.scaled(self.factor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub c_index: f64,
    pub calibration_slope: f64,
    /// `(1 - S_KM, 1 - S_DKM)` per test grid time.
    pub calibration_points: Vec<(f64, f64)>,
    pub mean_cov: f64,
    pub coverage95: f64,
    /// Earth mover's distance between observed event times and the median
    /// predictions of the same subjects.
    pub wasserstein_events: f64,
    pub medians: Vec<f64>,
    pub cov: Vec<f64>,
}

/// Report plus the curves it was computed from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub km: SurvivalCurve,
    /// Distribution-based KM from empirical CDFs of the draws.
    pub dkm: SurvivalCurve,
    /// Distribution-based KM from KDE CDFs; the calibration curve uses this one.
    pub dkm_kde: SurvivalCurve,
    pub samples: TimeSamples,
}

pub fn evaluate_detailed(
    sampler: &dyn TimeSampler,
    test: &SurvDataset,
    draws: usize,
    seed: u64,
) -> Result<Evaluation, MetricsError> {
    let samples = sampler.sample_times(test.x.view(), draws, seed)?;
    if samples.subjects() != test.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "sampler returned {} rows for {} subjects",
            samples.subjects(),
            test.len()
        )));
    }
    let grid = distinct_times(&test.t);
    let km_curve = km(&test.t, &test.y)?;
    let dkm_curve = dkm(&CdfMatrix::empirical(samples.values().view(), &grid)?, &test.y, &grid)?;
    let dkm_kde = dkm(&kde_cdf_matrix(&samples, &grid)?, &test.y, &grid)?;
    let calibration_points = calibration_curve(&dkm_kde, &km_curve)?;
    let calibration_slope = calibration_slope(&calibration_points)?;

    let medians = samples.medians();
    let c = c_index(&medians, &test.t, &test.y)?;
    let cov = cov_stats(&samples)?;
    let coverage = coverage95(&samples, &test.t, &test.y)?;
    let (obs, pred): (Vec<f64>, Vec<f64>) = test
        .t
        .iter()
        .zip(&medians)
        .zip(&test.y)
        .filter(|(_, &e)| e)
        .map(|((t, m), _)| (*t, *m))
        .unzip();
    let wasserstein_events = wasserstein1(&obs, &pred)?;

    Ok(Evaluation {
        report: EvalReport {
            c_index: c,
            calibration_slope,
            calibration_points,
            mean_cov: cov.mean,
            coverage95: coverage,
            wasserstein_events,
            medians,
            cov: cov.per_subject,
        },
        km: km_curve,
        dkm: dkm_curve,
        dkm_kde,
        samples,
    })
}

/// Draws `draws` samples per test subject and computes the full report.
pub fn evaluate(
    sampler: &dyn TimeSampler,
    test: &SurvDataset,
    draws: usize,
    seed: u64,
) -> Result<EvalReport, MetricsError> {
    Ok(evaluate_detailed(sampler, test, draws, seed)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn c_index_examples() {
        let t = [1.0, 2.0, 3.0];
        let y = [true; 3];
        assert_eq!(c_index(&[1.0, 2.0, 3.0], &t, &y).unwrap(), 1.0);
        assert_eq!(c_index(&[3.0, 2.0, 1.0], &t, &y).unwrap(), 0.0);
        let c = c_index(&[3.0, 5.0, 1.0], &[2.0, 4.0, 6.0], &[true, false, true]).unwrap();
        assert_eq!(c, 0.5);
        assert_eq!(c_index(&[1.0, 1.0], &[1.0, 2.0], &[true, true]).unwrap(), 0.5);
        assert!(matches!(
            c_index(&[1.0, 2.0], &[1.0, 2.0], &[false, false]),
            Err(MetricsError::NoComparablePairs)
        ));
    }

    #[test]
    fn cov_examples() {
        let s = TimeSamples::new(array![[2.0, 2.0], [1.0, 3.0]]).unwrap();
        let c = cov_stats(&s).unwrap();
        assert_eq!(c.per_subject, vec![0.0, 0.5]);
        assert_eq!(c.mean, 0.25);
        let z = TimeSamples::new(array![[0.0, 0.0]]).unwrap();
        assert!(matches!(cov_stats(&z), Err(MetricsError::ZeroMean(0))));
    }

    #[test]
    fn coverage_examples() {
        let row: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let s = TimeSamples::new(Array2::from_shape_fn((2, 101), |(_, j)| row[j])).unwrap();
        assert_eq!(coverage95(&s, &[5.0, 50.0], &[true, false]).unwrap(), 1.0);
        assert_eq!(coverage95(&s, &[5.0, 50.0], &[true, true]).unwrap(), 0.5);
        assert!(matches!(coverage95(&s, &[5.0, 5.0], &[false, false]), Err(MetricsError::NoEvents)));
        let few = TimeSamples::new(Array2::ones((1, 10))).unwrap();
        assert!(coverage95(&few, &[1.0], &[true]).is_err());
    }

    #[test]
    fn kde_examples() {
        assert!((kde_cdf(&[0.0, 0.0], &[0.0], Some(1.0))[0] - 0.5).abs() < 1e-15);
        let far = kde_cdf(&[1.0, 2.0, 3.0], &[3.0 + 6.0 * 0.5 + 1.0], Some(0.5));
        assert!((far[0] - 1.0).abs() < 1e-8);
        let step = kde_cdf(&[2.0, 2.0], &[1.0, 2.0, 3.0], None);
        assert_eq!(step, vec![0.0, 1.0, 1.0]);
    }

    /// Composite Simpson integration of the KDE density.
    #[test]
    fn kde_cdf_matches_density_quadrature() {
        let samples = [0.4, 1.3, 1.35, 2.8, 4.1, 0.9];
        let h = silverman_bandwidth(&samples);
        let density = |t: f64| {
            samples
                .iter()
                .map(|s| (-0.5 * ((t - s) / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt()))
                .sum::<f64>()
                / samples.len() as f64
        };
        let lower = 0.4 - 12.0 * h;
        let grid = [0.0, 1.0, 1.5, 3.0, 5.0];
        let cdf = kde_cdf(&samples, &grid, None);
        for (g, c) in grid.iter().zip(&cdf) {
            let m = 20_000;
            let step = (g - lower) / m as f64;
            let mut acc = density(lower) + density(*g);
            for k in 1..m {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * density(lower + k as f64 * step);
            }
            let quad = acc * step / 3.0;
            assert!((quad - c).abs() < 1e-6, "{g}: {quad} vs {c}");
        }
    }

    #[test]
    fn calibration_examples() {
        let diag: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * 0.2, i as f64 * 0.2)).collect();
        assert!((calibration_slope(&diag).unwrap() - 1.0).abs() < 1e-12);
        let pts = [(0.0, 0.0), (0.5, 1.0), (1.0, 2.0)];
        assert!((calibration_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        let flat = [(0.0, 0.3), (0.5, 0.3), (1.0, 0.3)];
        assert_eq!(calibration_slope(&flat).unwrap(), 0.0);
        assert!(calibration_slope(&[(0.5, 0.1), (0.5, 0.2)]).is_err());

        let gt = km(&[1.0, 2.0, 3.0], &[true, true, false]).unwrap();
        let pts = calibration_curve(&gt, &gt).unwrap();
        assert!(pts.iter().all(|(x, y)| x == y));
        let flat_model = SurvivalCurve::new(gt.grid.clone(), vec![1.0; 3]);
        assert!(calibration_curve(&flat_model, &gt).unwrap().iter().all(|p| p.1 == 0.0));
        let other = SurvivalCurve::new(vec![1.0, 2.0], vec![1.0, 1.0]);
        assert!(matches!(calibration_curve(&other, &gt), Err(MetricsError::GridMismatch)));
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1(&[4.0, 1.0], &[1.0, 4.0]).unwrap(), 0.0);
        assert!(wasserstein1(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn marginal_sampler_without_censoring_is_km() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let m = MarginalSampler::fit(&t, &[true; 4]).unwrap();
        assert_eq!(m.survival, vec![0.75, 0.5, 0.25, 0.0]);
        assert_eq!(m.quantile(1.0), 1.0);
        assert_eq!(m.quantile(0.5), 3.0);
        assert_eq!(m.quantile(0.1), 4.0);
    }

    proptest! {
        #[test]
        fn c_index_rank_only(pred in prop::collection::vec(-5.0f64..5.0, 10), t in prop::collection::vec(0.0f64..10.0, 10), y in prop::collection::vec(any::<bool>(), 10)) {
            prop_assume!(y.iter().any(|&e| e));
            if let Ok(c) = c_index(&pred, &t, &y) {
                let transformed: Vec<f64> = pred.iter().map(|p| (p * 0.7).exp() + 3.0).collect();
                prop_assert_eq!(c, c_index(&transformed, &t, &y).unwrap());
                prop_assert!((0.0..=1.0).contains(&c));
            }
        }

        #[test]
        fn kde_rows_monotone_bounded(samples in prop::collection::vec(0.0f64..20.0, 2..50), grid_raw in prop::collection::vec(-5.0f64..25.0, 1..30)) {
            let grid = distinct_times(&grid_raw);
            let cdf = kde_cdf(&samples, &grid, None);
            let mut prev = 0.0;
            for c in cdf {
                prop_assert!((0.0..=1.0).contains(&c) && c >= prev - 1e-15);
                prev = c;
            }
        }

        #[test]
        fn slope_ignores_point_order(mut pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..20)) {
            prop_assume!(pts.iter().any(|p| (p.0 - pts[0].0).abs() > 1e-3));
            let a = calibration_slope(&pts).unwrap();
            pts.reverse();
            prop_assert!((a - calibration_slope(&pts).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn wasserstein_metric_properties(a in prop::collection::vec(-10.0f64..10.0, 8), b in prop::collection::vec(-10.0f64..10.0, 8), c in prop::collection::vec(-10.0f64..10.0, 8)) {
            let ab = wasserstein1(&a, &b).unwrap();
            prop_assert_eq!(ab, wasserstein1(&b, &a).unwrap());
            prop_assert!(ab <= wasserstein1(&a, &c).unwrap() + wasserstein1(&c, &b).unwrap() + 1e-12);
        }
    }
}
