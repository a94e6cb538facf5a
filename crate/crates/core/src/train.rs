//! Minibatch Adam training with early stopping on a validation loss.

use std::io::Write;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SurvDataset;
use crate::losses::{loss_lognormal_nll, loss_total, LossConfig, LossError};
use crate::model::{LogNormalModel, ModelError, SfmModel};
use crate::tensor::{Array, BatchStats, Mode, Tape, TensorError, Var};

/// Seed offset for the validation noise stream.
const VALID_STREAM: u64 = 0x005e_ed0f_da7a;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("parameter {index}: shape {param:?} does not match gradient {grad:?}")]
    ShapeMismatch {
        index: usize,
        param: (usize, usize),
        grad: (usize, usize),
    },
    #[error("expected {expected} gradients, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("input width mismatch: model expects {expected}, dataset has {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch} ({stage}): loss = {loss}")]
    Diverged {
        epoch: usize,
        stage: &'static str,
        loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("history i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauSchedule {
    Constant,
    /// Temperature multiplied by `rate^epoch`, never below `floor` times the start value.
    Geometric { rate: f64, floor: f64 },
}

impl TauSchedule {
    pub fn multiplier(&self, epoch: usize) -> f64 {
        match *self {
            TauSchedule::Constant => 1.0,
            TauSchedule::Geometric { rate, floor } => rate.powi(epoch as i32).max(floor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub tau_schedule: TauSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 350,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            max_epochs: 2000,
            patience: 10,
            seed: 0,
            tau_schedule: TauSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.patience < 1 {
            return bad("patience must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0".into());
        }
        if let TauSchedule::Geometric { rate, floor } = self.tau_schedule {
            if !(rate > 0.0 && rate <= 1.0 && floor > 0.0 && floor <= 1.0) {
                return bad("geometric tau schedule needs rate and floor in (0, 1]".into());
            }
        }
        Ok(())
    }
}

/// Moment accumulators for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Array>) -> Self {
        let m: Vec<Array> = params.into_iter().map(|p| Array::zeros(p.dim())).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn from_shapes(shapes: &[(usize, usize)]) -> Self {
        let m: Vec<Array> = shapes.iter().map(|&s| Array::zeros(s)).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [&mut Array],
    grads: &[Array],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::CountMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() || state.m[index].dim() != g.dim() {
            return Err(TrainError::ShapeMismatch {
                index,
                param: p.dim(),
                grad: g.dim(),
            });
        }
    }
    state.step += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (k, p) in params.iter_mut().enumerate() {
        let g = &grads[k];
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        ndarray::Zip::from(&mut **p)
            .and(&mut *m)
            .and(&mut *v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss and counts epochs without improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,valid_loss")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.epoch, r.train_loss, r.valid_loss)?;
        }
        Ok(())
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .min_by(|a, b| a.valid_loss.total_cmp(&b.valid_loss))
    }
}

/// Objective recorded on a tape, with parameter nodes in `parameters()` order.
pub struct Objective {
    pub loss: Var,
    pub params: Vec<Var>,
    pub stats: Vec<BatchStats>,
}

/// A model the training loop can optimize.
pub trait Trainable: Clone {
    fn input_dim(&self) -> usize;
    fn parameters_mut(&mut self) -> Vec<&mut Array>;
    fn parameter_shapes(&self) -> Vec<(usize, usize)>;
    fn update_running_stats(&mut self, stats: &[BatchStats]);
    #[allow(clippy::too_many_arguments)]
    fn objective(
        &self,
        tape: &mut Tape,
        x: &Array,
        t: &[f64],
        y: &[bool],
        loss: &LossConfig,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Objective, TrainError>;
}

impl Trainable for SfmModel {
    fn input_dim(&self) -> usize {
        SfmModel::input_dim(self)
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array> {
        SfmModel::parameters_mut(self)
    }

    fn parameter_shapes(&self) -> Vec<(usize, usize)> {
        self.parameters().iter().map(|p| p.dim()).collect()
    }

    fn update_running_stats(&mut self, stats: &[BatchStats]) {
        SfmModel::update_running_stats(self, stats)
    }

    /// `loss_total` on one noise draw per subject.
    fn objective(
        &self,
        tape: &mut Tape,
        x: &Array,
        t: &[f64],
        y: &[bool],
        loss: &LossConfig,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Objective, TrainError> {
        let noise = self.draw_noise(x.nrows(), rng);
        let fwd = self.tape_forward(tape, x, &noise, mode, rng)?;
        let parts = loss_total(tape, fwd.output, t, y, loss)?;
        Ok(Objective {
            loss: parts.total,
            params: fwd.params,
            stats: fwd.stats,
        })
    }
}

impl Trainable for LogNormalModel {
    fn input_dim(&self) -> usize {
        LogNormalModel::input_dim(self)
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array> {
        LogNormalModel::parameters_mut(self)
    }

    fn parameter_shapes(&self) -> Vec<(usize, usize)> {
        self.parameters().iter().map(|p| p.dim()).collect()
    }

    fn update_running_stats(&mut self, stats: &[BatchStats]) {
        LogNormalModel::update_running_stats(self, stats)
    }

    /// Censored negative log-likelihood; the loss config is unused.
    fn objective(
        &self,
        tape: &mut Tape,
        x: &Array,
        t: &[f64],
        y: &[bool],
        _loss: &LossConfig,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Objective, TrainError> {
        let (mu, log_sigma, fwd) = self.tape_forward(tape, x, mode, rng)?;
        let loss = loss_lognormal_nll(tape, mu, log_sigma, t, y)?;
        Ok(Objective {
            loss,
            params: fwd.params,
            stats: fwd.stats,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: M,
    pub history: History,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn scaled_loss(loss: &LossConfig, factor: f64) -> LossConfig {
    LossConfig {
        tau_factor: loss.tau_factor * factor,
        tau: loss.tau.map(|t| t * factor),
        ..loss.clone()
    }
}

/// Evaluates the objective on a whole dataset in inference mode with a
/// fixed noise stream.
pub fn validation_loss<M: Trainable>(
    model: &M,
    ds: &SurvDataset,
    loss: &LossConfig,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ VALID_STREAM);
    let mut tape = Tape::new();
    let obj = model.objective(&mut tape, &ds.x, &ds.t, &ds.y, loss, Mode::Infer, &mut rng)?;
    Ok(tape.scalar(obj.loss))
}

pub fn train<M: Trainable>(
    model: M,
    train_ds: &SurvDataset,
    valid_ds: &SurvDataset,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>, TrainError> {
    cfg.validate()?;
    loss.validate()?;
    for ds in [train_ds, valid_ds] {
        if ds.width() != model.input_dim() {
            return Err(TrainError::WidthMismatch {
                expected: model.input_dim(),
                got: ds.width(),
            });
        }
    }

    let mut model = model;
    let mut best = model.clone();
    let mut state = AdamState::from_shapes(&model.parameter_shapes());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = History::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let epoch_loss = scaled_loss(loss, cfg.tau_schedule.multiplier(epoch));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train_ds.x.select(Axis(0), chunk);
            let t: Vec<f64> = chunk.iter().map(|&i| train_ds.t[i]).collect();
            let y: Vec<bool> = chunk.iter().map(|&i| train_ds.y[i]).collect();
            let mut tape = Tape::new();
            let obj = model.objective(&mut tape, &x, &t, &y, &epoch_loss, Mode::Train, &mut rng)?;
            let value = tape.scalar(obj.loss);
            if !value.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    stage: "train",
                    loss: value,
                });
            }
            let grads = tape.backward(obj.loss)?;
            let grads: Vec<Array> = obj.params.iter().map(|&p| grads.wrt(p)).collect();
            adam_step(&mut model.parameters_mut(), &grads, &mut state, cfg)?;
            model.update_running_stats(&obj.stats);
            total += value;
            batches += 1;
        }
        let train_loss = total / batches.max(1) as f64;
        let valid_loss = validation_loss(&model, valid_ds, &epoch_loss, cfg.seed)?;
        if !valid_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                stage: "validation",
                loss: valid_loss,
            });
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} valid {valid_loss:.6}");
        match stopper.observe(epoch, valid_loss) {
            Verdict::Improved => best = model.clone(),
            Verdict::Continue => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch: stopper.best_epoch,
        stopped_early,
    })
}
