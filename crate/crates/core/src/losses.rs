//! Training objectives: the calibration-matching loss, the accuracy loss for
//! censored/uncensored subjects, their weighted sum and the censored
//! log-normal likelihood of the baseline.
//!
//! Predictions `t_hat` (and `mu`, `log_sigma`) are `N x 1` tape nodes; every
//! loss returns a `1 x 1` node.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{distinct_times, pkm, smooth_pkm, EstimatorError};
use crate::tensor::{Array, Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty minibatch")]
    Empty,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("time at index {0} must be positive")]
    NonPositiveTime(usize),
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the accuracy term.
    pub lambda: f64,
    /// Temperature as a fraction of the minibatch's largest observed time.
    pub tau_factor: f64,
    /// Fixed temperature; overrides `tau_factor` when set.
    pub tau: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau_factor: 0.01,
            tau: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(LossError::InvalidConfig(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.tau_factor > 0.0 && self.tau_factor.is_finite()) {
            return Err(LossError::InvalidConfig(format!(
                "tau_factor must be > 0, got {}",
                self.tau_factor
            )));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(LossError::InvalidConfig(format!("tau must be > 0, got {tau}")));
            }
        }
        Ok(())
    }

    /// Temperature for a minibatch with observed times `t`.
    pub fn tau_for(&self, t: &[f64]) -> f64 {
        if let Some(tau) = self.tau {
            return tau;
        }
        let t_max = t.iter().copied().fold(0.0, f64::max);
        self.tau_factor * if t_max > 0.0 { t_max } else { 1.0 }
    }
}

fn check(tape: &Tape, v: Var, t: &[f64], y: &[bool]) -> Result<usize, LossError> {
    let n = t.len();
    if n == 0 {
        return Err(LossError::Empty);
    }
    if y.len() != n {
        return Err(LossError::LengthMismatch { expected: n, got: y.len() });
    }
    let dim = tape.value(v).dim();
    if dim != (n, 1) {
        return Err(TensorError::ShapeMismatch {
            op: "loss",
            lhs: dim,
            rhs: (n, 1),
        }
        .into());
    }
    Ok(n)
}

fn column(values: impl Iterator<Item = f64>, n: usize) -> Array {
    Array2::from_shape_vec((n, 1), values.collect()).expect("length checked by caller")
}

/// Mean absolute gap between the exact estimator on observed data and the
/// smooth estimator on `t_hat`, over the minibatch's distinct observed times.
pub fn loss_cal(
    tape: &mut Tape,
    t_hat: Var,
    t: &[f64],
    y: &[bool],
    cfg: &LossConfig,
) -> Result<Var, LossError> {
    check(tape, t_hat, t, y)?;
    let grid = distinct_times(t);
    let gt = pkm(t, y, &grid)?;
    let gt = tape.constant(Array2::from_shape_vec((1, grid.len()), gt.survival).expect("grid length"));
    let model = smooth_pkm(tape, t_hat, y, &grid, cfg.tau_for(t))?;
    let gap = tape.sub(model, gt)?;
    let gap = tape.abs(gap);
    Ok(tape.mean(gap))
}

/// The calibration loss with exact indicators on plain predictions.
pub fn loss_cal_exact(t_hat: &[f64], t: &[f64], y: &[bool]) -> Result<f64, LossError> {
    if t.is_empty() {
        return Err(LossError::Empty);
    }
    if t_hat.len() != t.len() {
        return Err(LossError::LengthMismatch { expected: t.len(), got: t_hat.len() });
    }
    let grid = distinct_times(t);
    let gt = pkm(t, y, &grid)?;
    let model = pkm(t_hat, y, &grid)?;
    Ok(gt
        .survival
        .iter()
        .zip(&model.survival)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / grid.len() as f64)
}

/// Mean hinge `max(0, t - t_hat)` over censored subjects plus mean
/// `|t - t_hat|` over uncensored ones. An empty group contributes 0.
pub fn loss_acc(tape: &mut Tape, t_hat: Var, t: &[f64], y: &[bool]) -> Result<Var, LossError> {
    let n = check(tape, t_hat, t, y)?;
    let events = y.iter().filter(|&&e| e).count();
    let censored = n - events;
    let obs = tape.constant(column(t.iter().copied(), n));
    let gap = tape.sub(obs, t_hat)?;
    let mut total = tape.constant(Array2::zeros((1, 1)));
    if censored > 0 {
        let mask = tape.constant(column(y.iter().map(|&e| if e { 0.0 } else { 1.0 }), n));
        let hinge = tape.max0(gap);
        let hinge = tape.mul(hinge, mask)?;
        let hinge = tape.sum(hinge);
        let hinge = tape.scale(hinge, 1.0 / censored as f64);
        total = tape.add(total, hinge)?;
    }
    if events > 0 {
        let mask = tape.constant(column(y.iter().map(|&e| if e { 1.0 } else { 0.0 }), n));
        let abs = tape.abs(gap);
        let abs = tape.mul(abs, mask)?;
        let abs = tape.sum(abs);
        let abs = tape.scale(abs, 1.0 / events as f64);
        total = tape.add(total, abs)?;
    }
    Ok(total)
}

/// Node handles for the consolidated objective and its two terms.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub cal: Var,
    pub acc: Var,
}

/// `loss_cal + lambda * loss_acc`.
pub fn loss_total(
    tape: &mut Tape,
    t_hat: Var,
    t: &[f64],
    y: &[bool],
    cfg: &LossConfig,
) -> Result<LossParts, LossError> {
    let cal = loss_cal(tape, t_hat, t, y, cfg)?;
    let acc = loss_acc(tape, t_hat, t, y)?;
    let weighted = tape.scale(acc, cfg.lambda);
    let total = tape.add(cal, weighted)?;
    Ok(LossParts { total, cal, acc })
}

/// Mean censored negative log-likelihood of a log-normal model:
/// `-[y log f(t) + (1 - y) log S(t)]`.
pub fn loss_lognormal_nll(
    tape: &mut Tape,
    mu: Var,
    log_sigma: Var,
    t: &[f64],
    y: &[bool],
) -> Result<Var, LossError> {
    let n = check(tape, mu, t, y)?;
    check(tape, log_sigma, t, y)?;
    if let Some(i) = t.iter().position(|&v| !(v > 0.0)) {
        return Err(LossError::NonPositiveTime(i));
    }
    let log_t = tape.constant(column(t.iter().map(|v| v.ln()), n));
    let event = tape.constant(column(y.iter().map(|&e| if e { 1.0 } else { 0.0 }), n));
    let cens = tape.constant(column(y.iter().map(|&e| if e { 0.0 } else { 1.0 }), n));

    let inv_sigma = tape.neg(log_sigma);
    let inv_sigma = tape.exp(inv_sigma);
    let centered = tape.sub(log_t, mu)?;
    let z = tape.mul(centered, inv_sigma)?;

    // -log f = log t + log sigma + log(2 pi) / 2 + z^2 / 2
    let half_sq = tape.square(z);
    let half_sq = tape.scale(half_sq, 0.5);
    let dens = tape.add(log_t, log_sigma)?;
    let dens = tape.add(dens, half_sq)?;
    let dens = tape.add_scalar(dens, 0.5 * (2.0 * std::f64::consts::PI).ln());
    let dens = tape.mul(dens, event)?;

    // -log S = -log Phi(-z)
    let neg_z = tape.neg(z);
    let surv = tape.log_normal_cdf(neg_z);
    let surv = tape.neg(surv);
    let surv = tape.mul(surv, cens)?;

    let per_subject = tape.add(dens, surv)?;
    Ok(tape.mean(per_subject))
}
