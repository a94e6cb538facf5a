//! Kaplan-Meier family estimators.
//!
//! All estimators share one interval convention: the factor at grid point
//! `t_i` counts mass in `(t_{i-1}, t_i]` and the risk set is everything still
//! beyond `t_{i-1}`, with `t_0 = -inf`. On observed data this makes the
//! point-prediction estimator reproduce the classical product-limit estimate
//! exactly, and it is what `F(t_i) - F(t_{i-1})` means for the
//! distribution-based estimator.

use ndarray::{Array2, ArrayView2};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::tensor::{sigmoid, Array, Tape, TensorError, Var};

/// Risk sets smaller than this freeze the curve instead of dividing.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("no observations")]
    Empty,
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("grid must be strictly increasing and finite (position {0})")]
    UnorderedGrid(usize),
    #[error("time at position {0} is negative or not finite")]
    InvalidTime(usize),
    #[error("curve has no at-risk/event counts")]
    MissingCounts,
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("CDF row {row} is not a non-decreasing sequence in [0, 1] (column {col})")]
    NonMonotoneCdf { row: usize, col: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Survival probabilities on a strictly increasing time grid. `S(t_0) = 1`
/// is implicit and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub grid: Vec<f64>,
    pub survival: Vec<f64>,
    pub bands: Option<Bands>,
    pub at_risk: Option<Vec<usize>>,
    pub events: Option<Vec<usize>>,
}

impl SurvivalCurve {
    pub fn new(grid: Vec<f64>, survival: Vec<f64>) -> Self {
        Self {
            grid,
            survival,
            bands: None,
            at_risk: None,
            events: None,
        }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Step-function evaluation: `S(t)` for the last grid point `<= t`, 1 before the grid.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    pub fn sup_distance(&self, other: &SurvivalCurve) -> f64 {
        self.survival
            .iter()
            .zip(&other.survival)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-subject CDFs evaluated on a grid: `values[[n, i]] = F_n(t_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfMatrix {
    values: Array2<f64>,
}

impl CdfMatrix {
    /// Validates that each row is non-decreasing and within `[0, 1]`.
    pub fn new(values: Array2<f64>) -> Result<Self, EstimatorError> {
        for (row, r) in values.rows().into_iter().enumerate() {
            let mut prev = 0.0;
            for (col, &v) in r.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) || v < prev {
                    return Err(EstimatorError::NonMonotoneCdf { row, col });
                }
                prev = v;
            }
        }
        Ok(Self { values })
    }

    /// Step CDFs of point masses: `F_n(t) = 1{t_hat_n <= t}`.
    pub fn point_masses(t_hat: &[f64], grid: &[f64]) -> Result<Self, EstimatorError> {
        check_grid(grid)?;
        let values = Array2::from_shape_fn((t_hat.len(), grid.len()), |(n, i)| {
            if t_hat[n] <= grid[i] {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self { values })
    }

    /// Empirical CDF of each row of `samples` (subjects x draws).
    pub fn empirical(samples: ArrayView2<f64>, grid: &[f64]) -> Result<Self, EstimatorError> {
        check_grid(grid)?;
        let s = samples.ncols();
        if s == 0 {
            return Err(EstimatorError::Empty);
        }
        let mut values = Array2::zeros((samples.nrows(), grid.len()));
        let mut row_buf = Vec::with_capacity(s);
        for (n, row) in samples.rows().into_iter().enumerate() {
            row_buf.clear();
            row_buf.extend(row.iter().copied());
            row_buf.sort_by(f64::total_cmp);
            for (i, &g) in grid.iter().enumerate() {
                let count = row_buf.partition_point(|&v| v <= g);
                values[[n, i]] = count as f64 / s as f64;
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

fn check_grid(grid: &[f64]) -> Result<(), EstimatorError> {
    if grid.is_empty() {
        return Err(EstimatorError::EmptyGrid);
    }
    for (i, g) in grid.iter().enumerate() {
        if !g.is_finite() || (i > 0 && *g <= grid[i - 1]) {
            return Err(EstimatorError::UnorderedGrid(i));
        }
    }
    Ok(())
}

fn check_lengths(t: &[f64], y: &[bool]) -> Result<(), EstimatorError> {
    if t.is_empty() {
        return Err(EstimatorError::Empty);
    }
    if y.len() != t.len() {
        return Err(EstimatorError::LengthMismatch {
            what: "indicators",
            expected: t.len(),
            got: y.len(),
        });
    }
    Ok(())
}

/// Sorted distinct values of `t`.
pub fn distinct_times(t: &[f64]) -> Vec<f64> {
    let mut grid = t.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Product-limit estimate over the distinct observed times (events and
/// censorings). Events at a time are counted before censorings at that time.
pub fn km(t: &[f64], y: &[bool]) -> Result<SurvivalCurve, EstimatorError> {
    check_lengths(t, y)?;
    if let Some(i) = t.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(EstimatorError::InvalidTime(i));
    }
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]));

    let n_total = t.len();
    let mut grid = Vec::new();
    let mut survival = Vec::new();
    let mut at_risk = Vec::new();
    let mut events = Vec::new();
    let mut s = 1.0;
    let mut seen = 0;
    let mut k = 0;
    while k < order.len() {
        let time = t[order[k]];
        let n = n_total - seen;
        let mut d = 0;
        while k < order.len() && t[order[k]] == time {
            if y[order[k]] {
                d += 1;
            }
            k += 1;
            seen += 1;
        }
        s *= 1.0 - d as f64 / n as f64;
        grid.push(time);
        survival.push(s);
        at_risk.push(n);
        events.push(d);
    }
    Ok(SurvivalCurve {
        grid,
        survival,
        bands: None,
        at_risk: Some(at_risk),
        events: Some(events),
    })
}

/// Adds exponential Greenwood (log-log) confidence bands at level `1 - alpha`.
pub fn greenwood_bands(curve: &SurvivalCurve, alpha: f64) -> Result<SurvivalCurve, EstimatorError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EstimatorError::InvalidAlpha(alpha));
    }
    let (Some(at_risk), Some(events)) = (&curve.at_risk, &curve.events) else {
        return Err(EstimatorError::MissingCounts);
    };
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let mut lower = Vec::with_capacity(curve.len());
    let mut upper = Vec::with_capacity(curve.len());
    let mut acc = 0.0;
    for ((&s, &n), &d) in curve.survival.iter().zip(at_risk).zip(events) {
        if n > d {
            acc += d as f64 / (n as f64 * (n - d) as f64);
        }
        if s <= 0.0 || s >= 1.0 {
            lower.push(s);
            upper.push(s);
            continue;
        }
        let ls = s.ln();
        let se = (acc / (ls * ls)).sqrt();
        lower.push(s.powf((z * se).exp()));
        upper.push(s.powf((-z * se).exp()));
    }
    let mut out = curve.clone();
    out.bands = Some(Bands { lower, upper });
    Ok(out)
}

/// Product-limit recursion driven by point predictions `t_hat`: the factor
/// at `t_i` is `1 - (#events with t_hat in (t_{i-1}, t_i]) / (#t_hat > t_{i-1})`.
pub fn pkm(t_hat: &[f64], y: &[bool], grid: &[f64]) -> Result<SurvivalCurve, EstimatorError> {
    check_lengths(t_hat, y)?;
    check_grid(grid)?;
    if let Some(i) = t_hat.iter().position(|v| v.is_nan()) {
        return Err(EstimatorError::InvalidTime(i));
    }
    let mut all = t_hat.to_vec();
    all.sort_by(f64::total_cmp);
    let mut ev: Vec<f64> = t_hat
        .iter()
        .zip(y)
        .filter_map(|(&v, &e)| e.then_some(v))
        .collect();
    ev.sort_by(f64::total_cmp);

    let n_total = t_hat.len();
    let mut survival = Vec::with_capacity(grid.len());
    let mut s = 1.0;
    let mut ev_prev = 0;
    let mut all_prev = 0;
    for &g in grid {
        let ev_now = ev.partition_point(|&v| v <= g);
        let d = ev_now - ev_prev;
        let n = n_total - all_prev;
        if n > 0 {
            s *= 1.0 - d as f64 / n as f64;
        }
        survival.push(s);
        ev_prev = ev_now;
        all_prev = all.partition_point(|&v| v <= g);
    }
    Ok(SurvivalCurve::new(grid.to_vec(), survival))
}

/// Distribution-based recursion: the factor at `t_i` is
/// `1 - sum_{events}(F_n(t_i) - F_n(t_{i-1})) / (N - sum_n F_n(t_{i-1}))`
/// with `F_n(t_0) = 0`.
pub fn dkm(cdf: &CdfMatrix, y: &[bool], grid: &[f64]) -> Result<SurvivalCurve, EstimatorError> {
    check_grid(grid)?;
    if cdf.nrows() == 0 {
        return Err(EstimatorError::Empty);
    }
    if y.len() != cdf.nrows() {
        return Err(EstimatorError::LengthMismatch {
            what: "indicators",
            expected: cdf.nrows(),
            got: y.len(),
        });
    }
    if cdf.ncols() != grid.len() {
        return Err(EstimatorError::LengthMismatch {
            what: "CDF columns",
            expected: grid.len(),
            got: cdf.ncols(),
        });
    }
    let f = cdf.values();
    let n_total = f.nrows() as f64;
    let mut survival = Vec::with_capacity(grid.len());
    let mut s: f64 = 1.0;
    for i in 0..grid.len() {
        let mut num = 0.0;
        let mut spent = 0.0;
        for n in 0..f.nrows() {
            let prev = if i == 0 { 0.0 } else { f[[n, i - 1]] };
            if y[n] {
                num += f[[n, i]] - prev;
            }
            spent += prev;
        }
        let den = n_total - spent;
        if den >= DENOMINATOR_FLOOR {
            s = (s * (1.0 - num / den)).clamp(0.0, 1.0);
        }
        survival.push(s);
    }
    Ok(SurvivalCurve::new(grid.to_vec(), survival))
}

/// Logistic relaxation of the Heaviside step `H(b) = (sign(b) + 1) / 2`.
pub fn heaviside_surrogate(b: f64, tau: f64) -> f64 {
    sigmoid(b / tau)
}

/// Differentiable point-prediction estimator with the indicators replaced by
/// `sigmoid(b / tau)`.
///
/// `t_hat` must be an `N x 1` node. Returns a `1 x |grid|` node holding the
/// survival values. The risk-set size is computed as `sum_n H(t_hat_n - t_{i-1})`,
/// which equals `N - sum_n H(t_{i-1} - t_hat_n)` for the logistic and keeps the
/// event count bounded by the risk set.
pub fn smooth_pkm(
    tape: &mut Tape,
    t_hat: Var,
    y: &[bool],
    grid: &[f64],
    tau: f64,
) -> Result<Var, EstimatorError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(EstimatorError::InvalidTemperature(tau));
    }
    check_grid(grid)?;
    let n = tape.value(t_hat).nrows();
    if n == 0 {
        return Err(EstimatorError::Empty);
    }
    if tape.value(t_hat).ncols() != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "smooth_pkm",
            lhs: tape.value(t_hat).dim(),
            rhs: (n, 1),
        }
        .into());
    }
    if y.len() != n {
        return Err(EstimatorError::LengthMismatch {
            what: "indicators",
            expected: n,
            got: y.len(),
        });
    }
    let m = grid.len();
    // -1e300 stands in for t_0 = -inf: the step saturates to exactly 1.
    let prev = Array::from_shape_fn((1, m), |(_, i)| if i == 0 { -1e300 } else { grid[i - 1] });
    let cur = Array::from_shape_fn((1, m), |(_, i)| grid[i]);
    let event_mask = Array::from_shape_fn((n, 1), |(k, _)| if y[k] { 1.0 } else { 0.0 });

    let prev = tape.constant(prev);
    let cur = tape.constant(cur);
    let event_mask = tape.constant(event_mask);

    let above_prev = tape.sub(t_hat, prev)?;
    let above_prev = tape.scale(above_prev, 1.0 / tau);
    let h_prev = tape.sigmoid(above_prev);
    let above_cur = tape.sub(t_hat, cur)?;
    let above_cur = tape.scale(above_cur, 1.0 / tau);
    let h_cur = tape.sigmoid(above_cur);

    let in_interval = tape.sub(h_prev, h_cur)?;
    let in_interval = tape.mul(in_interval, event_mask)?;
    let num = tape.sum_rows(in_interval);
    let den = tape.sum_rows(h_prev);

    let guard = tape.value(den).mapv(|d| if d < DENOMINATOR_FLOOR { 1.0 } else { 0.0 });
    let guard = tape.constant(guard);
    let den = tape.add(den, guard)?;
    let hazard = tape.div(num, den)?;
    let factor = tape.neg(hazard);
    let factor = tape.add_scalar(factor, 1.0);
    Ok(tape.cumprod(factor))
}

/// Convenience wrapper evaluating [`smooth_pkm`] on plain values.
pub fn smooth_pkm_curve(
    t_hat: &[f64],
    y: &[bool],
    grid: &[f64],
    tau: f64,
) -> Result<SurvivalCurve, EstimatorError> {
    let mut tape = Tape::new();
    let v = tape.constant(Array::from_shape_fn((t_hat.len(), 1), |(k, _)| t_hat[k]));
    let out = smooth_pkm(&mut tape, v, y, grid, tau)?;
    Ok(SurvivalCurve::new(grid.to_vec(), tape.value(out).iter().copied().collect()))
}
