//! Synthetic right-censored data with known conditional survival functions.
//!
//! Covariates are i.i.d. standard normal and the event rate is
//! `lambda(x) = exp(w . x)`. Event times are drawn by inverting the survival
//! function; censoring times are drawn from a scheme whose scale is tuned by
//! bisection until the realized censoring fraction hits the target.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, FeatureSchema, SurvDataset};
use crate::metrics::{c_index, MetricsError, TimeSampler, TimeSamples};

/// Largest allowed gap between realized and target censoring fractions.
pub const CENSORING_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid oracle spec: {0}")]
    InvalidSpec(String),
    #[error("could not reach censoring fraction {target}: best achieved {achieved}")]
    UnattainableCensoring { target: f64, achieved: f64 },
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Family {
    /// `S(t|x) = exp(-lambda t)`.
    Exponential,
    /// `S(t|x) = exp(-lambda t^k)`.
    Weibull { shape: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CensoringScheme {
    /// No censoring; the target fraction is ignored.
    None,
    /// `C ~ Uniform(0, c_max)`.
    UniformAdministrative,
    /// `C ~ Exponential(rate)`, independent of covariates.
    ExponentialIndependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub family: Family,
    pub weights: Vec<f64>,
    pub censoring: CensoringScheme,
    pub censoring_fraction: f64,
    pub seed: u64,
    /// Tuned censoring scale (`c_max` or rate); filled in by [`generate`].
    #[serde(default)]
    pub censoring_scale: Option<f64>,
}

impl OracleSpec {
    pub fn exponential(weights: Vec<f64>, censoring_fraction: f64, seed: u64) -> Self {
        Self {
            family: Family::Exponential,
            weights,
            censoring: CensoringScheme::UniformAdministrative,
            censoring_fraction,
            seed,
            censoring_scale: None,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.weights.is_empty() {
            return Err(SynthError::InvalidSpec("need at least one covariate".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(SynthError::InvalidSpec("weights must be finite".into()));
        }
        if let Family::Weibull { shape } = self.family {
            if !(shape > 0.0 && shape.is_finite()) {
                return Err(SynthError::InvalidSpec(format!("Weibull shape {shape} must be > 0")));
            }
        }
        if self.censoring != CensoringScheme::None
            && !(self.censoring_fraction > 0.0 && self.censoring_fraction < 1.0)
        {
            return Err(SynthError::InvalidSpec(format!(
                "censoring fraction {} must lie in (0, 1)",
                self.censoring_fraction
            )));
        }
        Ok(())
    }

    pub fn log_rate(&self, x: ArrayView1<f64>) -> f64 {
        self.weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum()
    }

    pub fn rate(&self, x: ArrayView1<f64>) -> f64 {
        self.log_rate(x).exp()
    }

    /// Event time with survival probability `u` under rate `rate`.
    pub fn inverse_survival(&self, rate: f64, u: f64) -> f64 {
        let base = -u.ln() / rate;
        match self.family {
            Family::Exponential => base,
            Family::Weibull { shape } => base.powf(1.0 / shape),
        }
    }
}

/// Draws `n` subjects. The returned spec records the tuned censoring scale.
pub fn generate(n: usize, spec: &OracleSpec) -> Result<(SurvDataset, OracleSpec), SynthError> {
    spec.validate()?;
    if n == 0 {
        return Err(SynthError::InvalidSpec("n must be at least 1".into()));
    }
    let d = spec.weights.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    let latent: Vec<f64> = (0..n)
        .map(|i| {
            let u: f64 = 1.0 - rng.random::<f64>();
            spec.inverse_survival(spec.rate(x.row(i)), u)
        })
        .collect();
    let censor_draws: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();

    let censor_times = |scale: f64| -> Vec<f64> {
        match spec.censoring {
            CensoringScheme::None => vec![f64::INFINITY; n],
            CensoringScheme::UniformAdministrative => {
                censor_draws.iter().map(|u| scale * u).collect()
            }
            CensoringScheme::ExponentialIndependent => {
                censor_draws.iter().map(|u| -u.ln() / scale).collect()
            }
        }
    };
    let censored_fraction = |c: &[f64]| {
        latent.iter().zip(c).filter(|(t, c)| *t > *c).count() as f64 / n as f64
    };

    let mut tuned = spec.clone();
    let censor = if spec.censoring == CensoringScheme::None {
        tuned.censoring_scale = None;
        censor_times(0.0)
    } else {
        // Censoring fraction is monotone in the log-scale; bisect on it.
        let increasing = spec.censoring == CensoringScheme::ExponentialIndependent;
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let frac = censored_fraction(&censor_times(mid.exp()));
            let gap = (frac - spec.censoring_fraction).abs();
            if gap < best.0 {
                best = (gap, mid, frac);
            }
            if (frac < spec.censoring_fraction) == increasing {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if best.0 > CENSORING_TOLERANCE {
            return Err(SynthError::UnattainableCensoring {
                target: spec.censoring_fraction,
                achieved: best.2,
            });
        }
        tuned.censoring_scale = Some(best.1.exp());
        censor_times(best.1.exp())
    };

    let t: Vec<f64> = latent.iter().zip(&censor).map(|(a, c)| a.min(*c)).collect();
    let y: Vec<bool> = latent.iter().zip(&censor).map(|(a, c)| a <= c).collect();
    let ds = SurvDataset::new(x, t, y, FeatureSchema::continuous(d).columns.into_iter().map(|c| c.name).collect())?;
    Ok((ds, tuned))
}

/// True conditional survival `S(t | x)`.
pub fn oracle_survival(spec: &OracleSpec, x: ArrayView1<f64>, t: f64) -> Result<f64, SynthError> {
    if !(t >= 0.0) {
        return Err(SynthError::NegativeTime(t));
    }
    let rate = spec.rate(x);
    Ok(match spec.family {
        Family::Exponential => (-rate * t).exp(),
        Family::Weibull { shape } => (-rate * t.powf(shape)).exp(),
    })
}

/// C-index of the true risk ordering (higher rate = earlier expected event).
pub fn oracle_cindex(spec: &OracleSpec, ds: &SurvDataset) -> Result<f64, SynthError> {
    let pred: Vec<f64> = (0..ds.len()).map(|i| -spec.log_rate(ds.x.row(i))).collect();
    Ok(c_index(&pred, &ds.t, &ds.y)?)
}

/// Samples from the true conditional event-time distribution.
#[derive(Debug, Clone)]
pub struct OracleSampler {
    pub spec: OracleSpec,
}

impl TimeSampler for OracleSampler {
    fn sample_times(
        &self,
        x: ArrayView2<f64>,
        draws: usize,
        seed: u64,
    ) -> Result<TimeSamples, MetricsError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::zeros((x.nrows(), draws));
        for (n, mut row) in out.rows_mut().into_iter().enumerate() {
            let rate = self.spec.rate(x.row(n));
            for v in row.iter_mut() {
                *v = self.spec.inverse_survival(rate, 1.0 - rng.random::<f64>());
            }
        }
        TimeSamples::new(out)
    }
}
