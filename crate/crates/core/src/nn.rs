//! Dense network kernel: row-major matrices, affine layers, Leaky ReLU,
//! inverted dropout, sigmoid/softmax and Adam.
//!
//! Everything runs in `f64`. Batches are `(batch, features)` row-major
//! matrices; layer weights are `(out, in)` row-major.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Leaky ReLU negative slope used throughout.
pub const LEAKY_ALPHA: f64 = 0.1;
/// Dropout rate used throughout training.
pub const DROPOUT_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(shape_err(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero width
        (0..self.rows).map(move |r| self.row(r))
    }

    /// Gather the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Affine layer `y = W x + b` with `W` stored `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients of one [`DenseLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &DenseGrad) {
        for (a, b) in self
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(other.weights.as_slice())
        {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(shape_err(format!(
                "bias length {} does not match {} output units",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// He-style uniform initialization: weights in `±sqrt(6 / in_dim)`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / in_dim.max(1) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            weights: Matrix {
                rows: out_dim,
                cols: in_dim,
                data,
            },
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }

    /// Single-sample forward into a caller-provided buffer.
    pub fn forward_row(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim());
        debug_assert_eq!(out.len(), self.out_dim());
        for (o, y) in out.iter_mut().enumerate() {
            *y = self.bias[o] + dot(self.weights.row(o), x);
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(shape_err(format!(
                "input width {} does not match layer input width {}",
                x.cols(),
                self.in_dim()
            )));
        }
        let mut y = Matrix::zeros(x.rows(), self.out_dim());
        for r in 0..x.rows() {
            let (xr, yr) = (x.row(r), &mut y.data[r * self.out_dim()..(r + 1) * self.out_dim()]);
            self.forward_row(xr, yr);
        }
        Ok(y)
    }

    /// Parameter gradients for upstream gradient `grad_out` at input `x`.
    pub fn backward_params(&self, x: &Matrix, grad_out: &Matrix, grad: &mut DenseGrad) {
        let inp = self.in_dim();
        for r in 0..x.rows() {
            let xr = x.row(r);
            let gr = grad_out.row(r);
            for (o, &g) in gr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let wrow = &mut grad.weights.data[o * inp..(o + 1) * inp];
                axpy(g, xr, wrow);
            }
        }
    }

    /// Gradient with respect to the layer input.
    pub fn backward_input(&self, grad_out: &Matrix) -> Matrix {
        let mut dx = Matrix::zeros(grad_out.rows(), self.in_dim());
        for r in 0..grad_out.rows() {
            let gr = grad_out.row(r);
            let dxr = dx.row_mut(r);
            for (o, &g) in gr.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, self.weights.row(o), dxr);
                }
            }
        }
        dx
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x
    }
}

/// Derivative of [`leaky_relu`]; the kink at 0 takes the `alpha` branch.
#[inline]
pub fn leaky_relu_grad(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout. Returns the output and the per-unit multiplier mask
/// (`0` for dropped units, `1/(1-rate)` for survivors, all `1` in eval mode).
pub fn dropout<R: Rng + ?Sized>(
    x: &Matrix,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        let mask = Matrix {
            rows: x.rows(),
            cols: x.cols(),
            data: vec![1.0; x.as_slice().len()],
        };
        return Ok((x.clone(), mask));
    }
    let mask = dropout_mask(x.rows(), x.cols(), rate, rng);
    let out = hadamard(x, &mask);
    Ok((out, mask))
}

pub(crate) fn dropout_mask<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut R,
) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Matrix { rows, cols, data }
}

pub(crate) fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.as_slice().len(), b.as_slice().len());
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max-shift. An empty input yields an empty output.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log(softmax(z))`, computed as `z - max - log(sum(exp(z - max)))`.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - max - lse).collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// `shapes` are the flat lengths of the parameter tensors, in the order
    /// they will be passed to [`AdamState::step`].
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one bias-corrected Adam update. Nothing is modified when any
    /// gradient is non-finite or a shape does not line up.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(shape_err(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != self.first[i].len() {
                return Err(shape_err(format!("adam tensor {i} has the wrong length")));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient tensor {i} element {j} is {}",
                    g[j]
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
