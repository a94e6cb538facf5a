//! Tape-based reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Every value on the tape is a rank-2 array; scalars are `1 x 1` and
//! vectors are stored as columns (`n x 1`) or rows (`1 x n`). Operations are
//! appended to the [`Tape`] in evaluation order, so the node list is already
//! topologically sorted and [`Tape::backward`] walks it in reverse.
//!
//! ```
//! use ndarray::array;
//! use sfm_core::tensor::Tape;
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(array![[3.0]]);
//! let sq = tape.mul(w, w).unwrap();
//! let root = tape.sum(sq);
//! let grads = tape.backward(root).unwrap();
//! assert_eq!(grads.wrt(w)[[0, 0]], 6.0);
//! ```

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;
use statrs::function::erf::erfc;
use thiserror::Error;

pub type Array = Array2<f64>;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Concat(Vec<Var>),
    Relu(Var),
    Max0(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    LogNormalCdf(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    CumProd(Var),
    Column(Var, usize),
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array,
        inv_std: Array,
    },
    BatchNormInfer {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array,
        inv_std: Array,
    },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a train-mode batch normalization, used by the
/// caller to update running estimates.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array,
    pub var: Array,
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Array> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zeros when the root does not depend on it.
    pub fn wrt(&self, var: Var) -> Array {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Array::zeros(self.shapes[var.0]),
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape(a: &Array) -> (usize, usize) {
    a.dim()
}

fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize), TensorError> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(TensorError::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

/// Sums `grad` over the axes along which an operand of `target` shape was broadcast.
fn reduce_to(grad: Array, target: (usize, usize)) -> Array {
    let mut g = grad;
    if target.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if target.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// `log Phi(z)`, accurate far into the lower tail.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z < -30.0 {
        let z2 = z * z;
        -0.5 * z2 - SQRT_2PI.ln() - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    } else {
        normal_cdf(z).ln()
    }
}

/// `phi(z) / Phi(z)`, the derivative of [`log_normal_cdf`].
pub fn inverse_mills(z: f64) -> f64 {
    if z < -30.0 {
        let z2 = z * z;
        -z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2))
    } else {
        normal_pdf(z) / normal_cdf(z)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable input; gradients are tracked.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Fixed input; no gradient flows into it.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Array {
        &self.nodes[var.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[[0, 0]]
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[x.0].value.mapv(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out_shape = broadcast_shape(name, shape(av), shape(bv))?;
        let mut out = Array::zeros(out_shape);
        Zip::from(&mut out)
            .and(&av.broadcast(out_shape).expect("checked shape"))
            .and(&bv.broadcast(out_shape).expect("checked shape"))
            .for_each(|o, &x, &y| *o = f(x, y));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.ncols() != bv.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: shape(av),
                rhs: shape(bv),
            });
        }
        let value = av.dot(bv);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("subtract", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("multiply", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("divide", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Concatenates along columns; all parts must share a row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(first) = parts.first() else {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                reason: "no operands".into(),
            });
        };
        let rows = self.nodes[first.0].value.nrows();
        for p in parts {
            let s = shape(&self.nodes[p.0].value);
            if s.0 != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: shape(&self.nodes[first.0].value),
                    rhs: s,
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("checked shapes");
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Elementwise `max(0, x)`; same subgradient convention as [`Tape::relu`].
    pub fn max0(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Max0(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Elementwise `log Phi(x)` for the standard normal CDF `Phi`.
    pub fn log_normal_cdf(&mut self, x: Var) -> Var {
        self.unary(x, log_normal_cdf, Op::LogNormalCdf(x))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.sum();
        let rg = self.rg(&[x]);
        self.push(Array::from_elem((1, 1), s), Op::Sum(x), rg)
    }

    /// Mean of all entries, as a `1 x 1` node. Empty input yields 0.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let m = if v.is_empty() {
            0.0
        } else {
            v.sum() / v.len() as f64
        };
        let rg = self.rg(&[x]);
        self.push(Array::from_elem((1, 1), m), Op::Mean(x), rg)
    }

    /// Column sums: `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(&[x]);
        self.push(v, Op::SumRows(x), rg)
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(&[x]);
        self.push(v, Op::SumCols(x), rg)
    }

    /// Running product along each row.
    pub fn cumprod(&mut self, x: Var) -> Var {
        let mut v = self.nodes[x.0].value.clone();
        for mut row in v.rows_mut() {
            let mut acc = 1.0;
            for e in row.iter_mut() {
                acc *= *e;
                *e = acc;
            }
        }
        let rg = self.rg(&[x]);
        self.push(v, Op::CumProd(x), rg)
    }

    pub fn column(&mut self, x: Var, k: usize) -> Result<Var, TensorError> {
        let v = &self.nodes[x.0].value;
        if k >= v.ncols() {
            return Err(TensorError::InvalidArgument {
                op: "column",
                reason: format!("column {k} out of range for shape {:?}", shape(v)),
            });
        }
        let col = v.slice(s![.., k..k + 1]).to_owned();
        let rg = self.rg(&[x]);
        Ok(self.push(col, Op::Column(x, k), rg))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<(), TensorError> {
        let xs = shape(&self.nodes[x.0].value);
        for p in [gamma, beta] {
            let ps = shape(&self.nodes[p.0].value);
            if ps != (1, xs.1) {
                return Err(TensorError::ShapeMismatch {
                    op: "batchnorm",
                    lhs: xs,
                    rhs: ps,
                });
            }
        }
        Ok(())
    }

    /// Train-mode batch normalization over rows using batch statistics
    /// (population variance). Returns the node and the batch statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats), TensorError> {
        self.check_bn(x, gamma, beta)?;
        let xv = &self.nodes[x.0].value;
        if xv.nrows() == 0 {
            return Err(TensorError::InvalidArgument {
                op: "batchnorm",
                reason: "empty batch".into(),
            });
        }
        let mean = xv.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        let centered = xv - &mean;
        let var = centered
            .mapv(|v| v * v)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = &centered * &inv_std;
        let out = &xhat * &self.nodes[gamma.0].value + &self.nodes[beta.0].value;
        let rg = self.rg(&[x, gamma, beta]);
        let node = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((node, BatchStats { mean, var }))
    }

    /// Inference-mode batch normalization with fixed running statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Array,
        running_var: &Array,
        eps: f64,
    ) -> Result<Var, TensorError> {
        self.check_bn(x, gamma, beta)?;
        let xv = &self.nodes[x.0].value;
        if shape(running_mean) != (1, xv.ncols()) || shape(running_var) != (1, xv.ncols()) {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                lhs: shape(xv),
                rhs: shape(running_mean),
            });
        }
        let inv_std = running_var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = (xv - running_mean) * &inv_std;
        let out = &xhat * &self.nodes[gamma.0].value + &self.nodes[beta.0].value;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout. In train mode each unit is kept with probability
    /// `1 - p` and scaled by `1 / (1 - p)`; in infer mode this is the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: format!("p must lie in [0, 1), got {p}"),
            });
        }
        if mode == Mode::Infer || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = Array::from_shape_fn(shape(&self.nodes[x.0].value), |_| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        });
        let m = self.constant(mask);
        self.mul(x, m)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let rs = shape(&self.nodes[root.0].value);
        if rs != (1, 1) {
            return Err(TensorError::NonScalarRoot(rs));
        }
        let mut grads: Vec<Option<Array>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array::ones((1, 1)));

        fn acc(grads: &mut [Option<Array>], v: Var, g: Array) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let val = |v: Var| &self.nodes[v.0].value;
            let needs = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, g.dot(&val(*b).t()));
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, val(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if needs(*a) {
                        acc(&mut grads, *a, reduce_to(g.clone(), shape(val(*a))));
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, reduce_to(g.mapv(|v| sign * v), shape(val(*b))));
                    }
                }
                Op::Mul(a, b) => {
                    let out = shape(&node.value);
                    let av = val(*a).broadcast(out).expect("forward shape");
                    let bv = val(*b).broadcast(out).expect("forward shape");
                    if needs(*a) {
                        acc(&mut grads, *a, reduce_to(&g * &bv, shape(val(*a))));
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, reduce_to(&g * &av, shape(val(*b))));
                    }
                }
                Op::Div(a, b) => {
                    let out = shape(&node.value);
                    let av = val(*a).broadcast(out).expect("forward shape");
                    let bv = val(*b).broadcast(out).expect("forward shape");
                    if needs(*a) {
                        acc(&mut grads, *a, reduce_to(&g / &bv, shape(val(*a))));
                    }
                    if needs(*b) {
                        let mut gb = Array::zeros(out);
                        Zip::from(&mut gb)
                            .and(&g)
                            .and(&av)
                            .and(&bv)
                            .for_each(|o, &gg, &x, &y| *o = -gg * x / (y * y));
                        acc(&mut grads, *b, reduce_to(gb, shape(val(*b))));
                    }
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        if needs(*p) {
                            acc(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        }
                        start += w;
                    }
                }
                Op::Relu(x) | Op::Max0(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(val(*x))
                        .for_each(|o, &v| if v <= 0.0 { *o = 0.0 });
                    acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|o, &s| *o *= s * (1.0 - s));
                    acc(&mut grads, *x, gx);
                }
                Op::Softplus(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(val(*x))
                        .for_each(|o, &v| *o *= sigmoid(v));
                    acc(&mut grads, *x, gx);
                }
                Op::Abs(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(val(*x)).for_each(|o, &v| {
                        *o *= if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::Log(x) => acc(&mut grads, *x, &g / val(*x)),
                Op::Exp(x) => acc(&mut grads, *x, &g * &node.value),
                Op::Square(x) => acc(&mut grads, *x, &g * &val(*x).mapv(|v| 2.0 * v)),
                Op::LogNormalCdf(x) => {
                    acc(&mut grads, *x, &g * &val(*x).mapv(inverse_mills));
                }
                Op::Scale(x, k) => acc(&mut grads, *x, g.mapv(|v| v * k)),
                Op::AddScalar(x) => acc(&mut grads, *x, g),
                Op::Sum(x) => {
                    let gx = Array::from_elem(shape(val(*x)), g[[0, 0]]);
                    acc(&mut grads, *x, gx);
                }
                Op::Mean(x) => {
                    let n = val(*x).len().max(1) as f64;
                    let gx = Array::from_elem(shape(val(*x)), g[[0, 0]] / n);
                    acc(&mut grads, *x, gx);
                }
                Op::SumRows(x) | Op::SumCols(x) => {
                    let gx = g.broadcast(shape(val(*x))).expect("reduced shape").to_owned();
                    acc(&mut grads, *x, gx);
                }
                Op::CumProd(x) => {
                    // d out_i / d x_j = prod_{k<=i, k!=j} x_k, accumulated right to left
                    // so zero factors need no division.
                    let xv = val(*x);
                    let out = &node.value;
                    let mut gx = Array::zeros(shape(xv));
                    for r in 0..xv.nrows() {
                        let c = xv.ncols();
                        let mut tail = 0.0;
                        for j in (0..c).rev() {
                            tail = g[[r, j]] + if j + 1 < c { xv[[r, j + 1]] * tail } else { 0.0 };
                            let prefix = if j == 0 { 1.0 } else { out[[r, j - 1]] };
                            gx[[r, j]] = prefix * tail;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Column(x, k) => {
                    let mut gx = Array::zeros(shape(val(*x)));
                    gx.slice_mut(s![.., *k..*k + 1]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::BatchNormTrain {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if needs(*gamma) {
                        acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(*beta) {
                        acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(*x) {
                        let n = xhat.nrows() as f64;
                        let dxhat = &g * val(*gamma);
                        let sum_d = dxhat.sum_axis(Axis(0)).insert_axis(Axis(0));
                        let sum_dx = (&dxhat * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        let gx = (dxhat.mapv(|v| v * n) - &sum_d - xhat * &sum_dx) * inv_std / n;
                        acc(&mut grads, *x, gx);
                    }
                }
                Op::BatchNormInfer {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if needs(*gamma) {
                        acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(*beta) {
                        acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(*x) {
                        acc(&mut grads, *x, &g * val(*gamma) * inv_std);
                    }
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| shape(&n.value)).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }
}

/// Central-difference gradient check.
///
/// `f` builds a scalar graph from leaves holding `params`. Returns the maximum
/// over all coordinates of `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn grad_check<F>(f: F, params: &[Array], h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |point: &[Array]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.scalar(root))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut worst: f64 = 0.0;
    let mut point: Vec<Array> = params.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let g_ad = grads.wrt(*var);
        for idx in 0..params[k].len() {
            let (r, c) = (idx / params[k].ncols(), idx % params[k].ncols());
            let orig = params[k][[r, c]];
            point[k][[r, c]] = orig + h;
            let plus = eval(&point)?;
            point[k][[r, c]] = orig - h;
            let minus = eval(&point)?;
            point[k][[r, c]] = orig;
            let g_fd = (plus - minus) / (2.0 * h);
            let err = (g_ad[[r, c]] - g_fd).abs() / g_fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
