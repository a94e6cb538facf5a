//! The noise-injected generator `G(x, eps)` and a log-normal AFT baseline.
//!
//! Both models share the same trunk: `layers` blocks of
//! linear -> batchnorm -> ReLU -> dropout. For the generator one noise vector
//! per subject is drawn per forward pass and the same vector is concatenated
//! to the input of every linear layer, including the output head. The
//! baseline uses the trunk without noise and two linear heads (location and
//! log-scale of log-time).
//!
//! Checkpoints are JSON documents (see [`Checkpoint`]): a `kind` tag, the
//! config, every weight matrix as an ndarray object (`v`, `dim`, `data`) and
//! the batchnorm running statistics. Floats round-trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricsError, TimeSampler, TimeSamples};
use crate::tensor::{self, Array, BatchStats, Mode, Tape, TensorError, Var};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input width must be at least 1")]
    ZeroInput,
    #[error("input width mismatch: model expects {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("noise shape mismatch: expected {expected:?}, got {got:?}")]
    NoiseShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Uniform on (-1, 1).
    Uniform,
    StandardNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfmConfig {
    pub hidden_units: usize,
    pub layers: usize,
    pub dropout_p: f64,
    pub noise_dim: usize,
    pub noise_kind: NoiseKind,
    pub batchnorm: bool,
}

impl Default for SfmConfig {
    fn default() -> Self {
        Self {
            hidden_units: 50,
            layers: 2,
            dropout_p: 0.2,
            noise_dim: 10,
            noise_kind: NoiseKind::Uniform,
            batchnorm: true,
        }
    }
}

impl SfmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_units == 0 {
            return Err(ModelError::InvalidConfig("hidden_units must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in x fan_out`.
    pub w: Array,
    /// `1 x fan_out`.
    pub b: Array,
}

impl Dense {
    fn xavier(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            w: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound)),
            b: Array2::zeros((1, fan_out)),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array2::zeros((1, fan_out)),
        }
    }

    fn apply(&self, x: &Array) -> Array {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub gamma: Array,
    pub beta: Array,
    pub running_mean: Array,
    pub running_var: Array,
}

impl Norm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array2::ones((1, width)),
            beta: Array2::zeros((1, width)),
            running_mean: Array2::zeros((1, width)),
            running_var: Array2::ones((1, width)),
        }
    }
}

/// Hidden blocks shared by the generator and the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trunk {
    pub input_dim: usize,
    pub noise_dim: usize,
    pub dropout_p: f64,
    pub dense: Vec<Dense>,
    /// Empty when batchnorm is off.
    pub norms: Vec<Norm>,
}

/// Nodes recorded by a tape forward pass.
#[derive(Debug, Clone)]
pub struct TapeForward {
    /// Model output (`N x 1` for the generator, `N x 2` for the baseline).
    pub output: Var,
    /// One node per parameter, in [`Trunk::parameters`] order followed by heads.
    pub params: Vec<Var>,
    /// Train-mode batch statistics per batchnorm layer.
    pub stats: Vec<BatchStats>,
}

impl Trunk {
    fn init(cfg: &SfmConfig, input_dim: usize, noise_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut dense = Vec::with_capacity(cfg.layers);
        let mut fan_in = input_dim + noise_dim;
        for _ in 0..cfg.layers {
            dense.push(Dense::xavier(fan_in, cfg.hidden_units, rng));
            fan_in = cfg.hidden_units + noise_dim;
        }
        let norms = if cfg.batchnorm {
            (0..cfg.layers).map(|_| Norm::new(cfg.hidden_units)).collect()
        } else {
            Vec::new()
        };
        Self {
            input_dim,
            noise_dim,
            dropout_p: cfg.dropout_p,
            dense,
            norms,
        }
    }

    /// Width of the representation fed to the heads.
    pub fn output_width(&self) -> usize {
        self.dense.last().map_or(self.input_dim, |d| d.w.ncols()) + self.noise_dim
    }

    fn parameters(&self) -> Vec<&Array> {
        let mut out = Vec::new();
        for (l, d) in self.dense.iter().enumerate() {
            out.push(&d.w);
            out.push(&d.b);
            if let Some(n) = self.norms.get(l) {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for d in self.dense.iter_mut() {
            out.push(&mut d.w);
            out.push(&mut d.b);
            if let Some(n) = norms.next() {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<(), ModelError> {
        if x.ncols() != self.input_dim {
            return Err(ModelError::WidthMismatch {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn check_noise(&self, n: usize, noise: Option<&Array>) -> Result<(), ModelError> {
        let got = noise.map_or((n, 0), |e| e.dim());
        if got != (n, self.noise_dim) && !(self.noise_dim == 0 && noise.is_none()) {
            return Err(ModelError::NoiseShape {
                expected: (n, self.noise_dim),
                got,
            });
        }
        Ok(())
    }

    fn tape_forward(
        &self,
        tape: &mut Tape,
        x: &Array,
        noise: Option<&Array>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
        params: &mut Vec<Var>,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var, ModelError> {
        self.check_input(x.view())?;
        self.check_noise(x.nrows(), noise)?;
        let eps = match noise {
            Some(e) if self.noise_dim > 0 => Some(tape.constant(e.clone())),
            _ => None,
        };
        let with_noise = |tape: &mut Tape, h: Var| -> Result<Var, TensorError> {
            match eps {
                Some(e) => tape.concat(&[h, e]),
                None => Ok(h),
            }
        };
        let mut h = tape.constant(x.clone());
        for (l, d) in self.dense.iter().enumerate() {
            let input = with_noise(tape, h)?;
            let w = tape.leaf(d.w.clone());
            let b = tape.leaf(d.b.clone());
            params.extend([w, b]);
            let prod = tape.matmul(input, w)?;
            let mut z = tape.add(prod, b)?;
            if let Some(n) = self.norms.get(l) {
                let g = tape.leaf(n.gamma.clone());
                let be = tape.leaf(n.beta.clone());
                params.extend([g, be]);
                z = match mode {
                    Mode::Train => {
                        let (out, st) = tape.batchnorm_train(z, g, be, BATCHNORM_EPS)?;
                        stats.push(st);
                        out
                    }
                    Mode::Infer => tape.batchnorm_infer(
                        z,
                        g,
                        be,
                        &n.running_mean,
                        &n.running_var,
                        BATCHNORM_EPS,
                    )?,
                };
            }
            let a = tape.relu(z);
            h = tape.dropout(a, self.dropout_p, mode, rng)?;
        }
        Ok(with_noise(tape, h)?)
    }

    /// Inference-mode forward pass without a tape.
    fn infer(&self, x: ArrayView2<f64>, noise: Option<&Array>) -> Result<Array, ModelError> {
        self.check_input(x)?;
        self.check_noise(x.nrows(), noise)?;
        let with_noise = |h: Array| match noise {
            Some(e) if self.noise_dim > 0 => concatenate![Axis(1), h, *e],
            _ => h,
        };
        let mut h = x.to_owned();
        for (l, d) in self.dense.iter().enumerate() {
            let mut z = d.apply(&with_noise(h));
            if let Some(n) = self.norms.get(l) {
                let scale = &n.gamma / &n.running_var.mapv(|v| (v + BATCHNORM_EPS).sqrt());
                z = (z - &n.running_mean) * &scale + &n.beta;
            }
            h = z.mapv(|v| v.max(0.0));
        }
        Ok(with_noise(h))
    }

    fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for (n, st) in self.norms.iter_mut().zip(stats) {
            n.running_mean = &n.running_mean * BATCHNORM_MOMENTUM + &st.mean * (1.0 - BATCHNORM_MOMENTUM);
            n.running_var = &n.running_var * BATCHNORM_MOMENTUM + &st.var * (1.0 - BATCHNORM_MOMENTUM);
        }
    }
}

/// The generator `G(x, eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmModel {
    pub config: SfmConfig,
    pub seed: u64,
    pub trunk: Trunk,
    pub head: Dense,
}

impl SfmModel {
    pub fn init(config: SfmConfig, d: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if d == 0 {
            return Err(ModelError::ZeroInput);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = Trunk::init(&config, d, config.noise_dim, &mut rng);
        let head = Dense::xavier(trunk.output_width(), 1, &mut rng);
        Ok(Self {
            config,
            seed,
            trunk,
            head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim
    }

    /// One noise vector per row.
    pub fn draw_noise(&self, n: usize, rng: &mut ChaCha8Rng) -> Array {
        draw_noise(self.config.noise_kind, n, self.config.noise_dim, rng)
    }

    pub fn parameters(&self) -> Vec<&Array> {
        let mut p = self.trunk.parameters();
        p.extend([&self.head.w, &self.head.b]);
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array> {
        let mut p = self.trunk.parameters_mut();
        p.extend([&mut self.head.w, &mut self.head.b]);
        p
    }

    /// Records `t_hat = softplus(G(x, noise))` (`N x 1`) on the tape.
    pub fn tape_forward(
        &self,
        tape: &mut Tape,
        x: &Array,
        noise: &Array,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<TapeForward, ModelError> {
        let mut params = Vec::new();
        let mut stats = Vec::new();
        let h = self
            .trunk
            .tape_forward(tape, x, Some(noise), mode, rng, &mut params, &mut stats)?;
        let w = tape.leaf(self.head.w.clone());
        let b = tape.leaf(self.head.b.clone());
        params.extend([w, b]);
        let prod = tape.matmul(h, w)?;
        let z = tape.add(prod, b)?;
        Ok(TapeForward {
            output: tape.softplus(z),
            params,
            stats,
        })
    }

    /// Inference-mode predictions for one noise draw per row (`N x 1`).
    pub fn infer(&self, x: ArrayView2<f64>, noise: &Array) -> Result<Array, ModelError> {
        let h = self.trunk.infer(x, Some(noise))?;
        Ok(self.head.apply(&h).mapv(tensor::softplus))
    }

    /// `draws` samples per subject. Train mode uses batch statistics and
    /// dropout; infer mode uses running statistics.
    pub fn sample(
        &self,
        x: ArrayView2<f64>,
        draws: usize,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array, ModelError> {
        self.trunk.check_input(x)?;
        let n = x.nrows();
        let mut out = Array2::zeros((n, draws));
        let owned = x.to_owned();
        for s in 0..draws {
            let noise = self.draw_noise(n, rng);
            let col = match mode {
                Mode::Infer => self.infer(x, &noise)?,
                Mode::Train => {
                    let mut tape = Tape::new();
                    let fwd = self.tape_forward(&mut tape, &owned, &noise, mode, rng)?;
                    tape.value(fwd.output).clone()
                }
            };
            out.slice_mut(s![.., s]).assign(&col.column(0));
        }
        Ok(out)
    }

    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        self.trunk.update_running_stats(stats);
    }
}

impl TimeSampler for SfmModel {
    fn sample_times(
        &self,
        x: ArrayView2<f64>,
        draws: usize,
        seed: u64,
    ) -> Result<TimeSamples, MetricsError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = self
            .sample(x, draws, Mode::Infer, &mut rng)
            .map_err(|e| MetricsError::Sampler(e.to_string()))?;
        TimeSamples::new(out)
    }
}

pub fn draw_noise(kind: NoiseKind, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Array {
    match kind {
        NoiseKind::Uniform => Array2::from_shape_simple_fn((n, k), || rng.random_range(-1.0..1.0)),
        NoiseKind::StandardNormal => Array2::from_shape_simple_fn((n, k), || rng.sample(StandardNormal)),
    }
}

/// Log-normal AFT baseline: `log T ~ N(mu(x), sigma(x)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNormalModel {
    pub config: SfmConfig,
    pub seed: u64,
    pub trunk: Trunk,
    pub mu_head: Dense,
    /// Zero-initialized so that `sigma = 1` at start.
    pub log_sigma_head: Dense,
}

impl LogNormalModel {
    /// `config.noise_dim` and `noise_kind` are ignored.
    pub fn init(config: SfmConfig, d: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if d == 0 {
            return Err(ModelError::ZeroInput);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = Trunk::init(&config, d, 0, &mut rng);
        let width = trunk.output_width();
        let mu_head = Dense::xavier(width, 1, &mut rng);
        Ok(Self {
            config,
            seed,
            trunk,
            mu_head,
            log_sigma_head: Dense::zeros(width, 1),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim
    }

    pub fn parameters(&self) -> Vec<&Array> {
        let mut p = self.trunk.parameters();
        p.extend([
            &self.mu_head.w,
            &self.mu_head.b,
            &self.log_sigma_head.w,
            &self.log_sigma_head.b,
        ]);
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array> {
        let mut p = self.trunk.parameters_mut();
        p.extend([
            &mut self.mu_head.w,
            &mut self.mu_head.b,
            &mut self.log_sigma_head.w,
            &mut self.log_sigma_head.b,
        ]);
        p
    }

    /// Records `(mu, log_sigma)` as two `N x 1` nodes.
    pub fn tape_forward(
        &self,
        tape: &mut Tape,
        x: &Array,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, Var, TapeForward), ModelError> {
        let mut params = Vec::new();
        let mut stats = Vec::new();
        let h = self
            .trunk
            .tape_forward(tape, x, None, mode, rng, &mut params, &mut stats)?;
        let mut head = |tape: &mut Tape, d: &Dense| -> Result<Var, TensorError> {
            let w = tape.leaf(d.w.clone());
            let b = tape.leaf(d.b.clone());
            params.extend([w, b]);
            let prod = tape.matmul(h, w)?;
            tape.add(prod, b)
        };
        let mu = head(tape, &self.mu_head)?;
        let log_sigma = head(tape, &self.log_sigma_head)?;
        let output = tape.concat(&[mu, log_sigma])?;
        Ok((
            mu,
            log_sigma,
            TapeForward {
                output,
                params,
                stats,
            },
        ))
    }

    /// Inference-mode `(mu, log_sigma)` per subject.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let h = self.trunk.infer(x, None)?;
        let mu = self.mu_head.apply(&h).column(0).to_vec();
        let log_sigma = self.log_sigma_head.apply(&h).column(0).to_vec();
        Ok((mu, log_sigma))
    }

    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        self.trunk.update_running_stats(stats);
    }
}

impl TimeSampler for LogNormalModel {
    fn sample_times(
        &self,
        x: ArrayView2<f64>,
        draws: usize,
        seed: u64,
    ) -> Result<TimeSamples, MetricsError> {
        let (mu, log_sigma) = self
            .forward(x)
            .map_err(|e| MetricsError::Sampler(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::zeros((x.nrows(), draws));
        for s in 0..draws {
            for n in 0..x.nrows() {
                let z: f64 = rng.sample(StandardNormal);
                out[[n, s]] = (mu[n] + log_sigma[n].exp() * z).exp();
            }
        }
        TimeSamples::new(out)
    }
}

/// Log-normal CDF `Phi((ln t - mu) / sigma)`; 0 for `t <= 0`.
pub fn lognormal_cdf(t: f64, mu: f64, sigma: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    tensor::normal_cdf((t.ln() - mu) / sigma)
}

/// A saved model of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    Sfm(SfmModel),
    Lognormal(LogNormalModel),
}

impl Checkpoint {
    pub fn input_dim(&self) -> usize {
        match self {
            Checkpoint::Sfm(m) => m.input_dim(),
            Checkpoint::Lognormal(m) => m.input_dim(),
        }
    }

    pub fn sampler(&self) -> &dyn TimeSampler {
        match self {
            Checkpoint::Sfm(m) => m,
            Checkpoint::Lognormal(m) => m,
        }
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), ModelError> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}
