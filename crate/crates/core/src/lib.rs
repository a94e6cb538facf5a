//! Survival analysis with Kaplan-Meier family estimators and survival
//! function matching (SFM): a noise-injected neural sampler of event times
//! trained so that its population survival curve matches the empirical one.
//!
//! Modules, bottom-up:
//!
//! - [`tensor`]: reverse-mode autodiff over dense arrays.
//! - [`estimators`]: KM, point-prediction KM, distribution-based KM and the
//!   differentiable relaxation used for training.
//! - [`dataset`] / [`synth`]: CSV ingestion and synthetic oracle data.
//! - [`model`], [`losses`], [`train`]: the generator, its objectives and the
//!   optimization loop, plus a log-normal baseline.
//! - [`metrics`]: C-index, dispersion, coverage, calibration curve and slope.

pub mod dataset;
pub mod estimators;
pub mod tensor;
pub mod metrics;
pub mod synth;
pub mod losses;
pub mod model;
pub mod train;
