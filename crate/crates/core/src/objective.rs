//! Local ERM objectives.
//!
//! Agent `i` minimizes
//! `f_i(x) = (1/|D_i|) sum_n log(1 + exp(-z_n <x, y_n>)) + (lambda/N) ||x||^2`,
//! so that `sum_i f_i` is the global regularized objective. The x-update sees
//! gradients clipped to L2 norm `grad_bound`, which makes the per-step
//! sensitivity bound hold for the implemented update.

use thiserror::Error;

use crate::dataset::DesignMatrix;
use crate::linalg::{dot, norm, norm_sq, power_iteration, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("dimension mismatch: model has {model}, data has {data}")]
    DimensionMismatch { model: usize, data: usize },
    #[error("invalid objective parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub loss_kind: LossKind,
    pub lambda: f64,
    pub n_agents: usize,
    pub grad_bound: f64,
}

impl ObjectiveSpec {
    pub fn logistic(lambda: f64, n_agents: usize, grad_bound: f64) -> Result<Self, ObjectiveError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ObjectiveError::InvalidParameter(format!("lambda = {lambda}")));
        }
        if !(grad_bound > 0.0) {
            return Err(ObjectiveError::InvalidParameter(format!("grad_bound = {grad_bound}")));
        }
        if n_agents == 0 {
            return Err(ObjectiveError::InvalidParameter("n_agents = 0".into()));
        }
        Ok(Self {
            loss_kind: LossKind::Logistic,
            lambda,
            n_agents,
            grad_bound,
        })
    }

    /// Per-agent share of the regularizer weight, `lambda / N`.
    fn reg(&self) -> f64 {
        self.lambda / self.n_agents as f64
    }
}

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Logistic function `1 / (1 + exp(-t))`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check_dim(shard: &DesignMatrix, x: &[f64]) -> Result<(), ObjectiveError> {
    if shard.dim() != x.len() {
        return Err(ObjectiveError::DimensionMismatch {
            model: x.len(),
            data: shard.dim(),
        });
    }
    Ok(())
}

fn data_loss(shard: &DesignMatrix, x: &[f64]) -> f64 {
    if shard.is_empty() {
        return 0.0;
    }
    let total: f64 = (0..shard.len())
        .map(|n| softplus(-shard.label(n) * dot(x, shard.row(n))))
        .sum();
    total / shard.len() as f64
}

pub fn local_loss(spec: &ObjectiveSpec, shard: &DesignMatrix, x: &[f64]) -> Result<f64, ObjectiveError> {
    check_dim(shard, x)?;
    Ok(data_loss(shard, x) + spec.reg() * norm_sq(x))
}

pub fn local_gradient(spec: &ObjectiveSpec, shard: &DesignMatrix, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    check_dim(shard, x)?;
    let mut g: Vec<f64> = x.iter().map(|v| 2.0 * spec.reg() * v).collect();
    if shard.is_empty() {
        return Ok(g);
    }
    let inv_n = 1.0 / shard.len() as f64;
    for n in 0..shard.len() {
        let y = shard.row(n);
        let z = shard.label(n);
        let coef = -z * sigmoid(-z * dot(x, y)) * inv_n;
        for (gj, yj) in g.iter_mut().zip(y) {
            *gj += coef * yj;
        }
    }
    Ok(g)
}

/// Scale `g` down to norm `bound` if it is longer.
pub fn clip_to_norm(mut g: Vec<f64>, bound: f64) -> Vec<f64> {
    let n = norm(&g);
    if n > bound {
        let s = bound / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
    g
}

pub fn clipped_gradient(spec: &ObjectiveSpec, shard: &DesignMatrix, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    Ok(clip_to_norm(local_gradient(spec, shard, x)?, spec.grad_bound))
}

/// Strong convexity and smoothness constants (Hessian convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureReport {
    pub mu: f64,
    pub v: f64,
}

/// Largest eigenvalue of `Y^T Y / |D|`.
pub fn gram_top_eigenvalue(shard: &DesignMatrix) -> f64 {
    let d = shard.dim();
    if shard.is_empty() || d == 0 {
        return 0.0;
    }
    let mut gram = Matrix::zeros(d, d);
    for n in 0..shard.len() {
        let y = shard.row(n);
        for a in 0..d {
            if y[a] == 0.0 {
                continue;
            }
            for b in a..d {
                gram[(a, b)] += y[a] * y[b];
            }
        }
    }
    let inv = 1.0 / shard.len() as f64;
    for a in 0..d {
        for b in a..d {
            let v = gram[(a, b)] * inv;
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    power_iteration(&gram, 10_000, 1e-12)
}

/// `mu = 2 lambda / N`; `v = max_i lambda_max(Y_i^T Y_i)/(4 |D_i|) + 2 lambda / N`.
pub fn curvature(spec: &ObjectiveSpec, shards: &[DesignMatrix]) -> CurvatureReport {
    let reg = 2.0 * spec.reg();
    let data = shards
        .iter()
        .map(|s| 0.25 * gram_top_eigenvalue(s))
        .fold(0.0, f64::max);
    CurvatureReport { mu: reg, v: data + reg }
}

/// What the ADMM engine needs from an agent's local objective.
pub trait LocalObjective: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of records backing this objective (metric weight).
    fn weight(&self) -> usize;

    /// `f_i(x)`.
    fn loss(&self, x: &[f64]) -> f64;

    /// Mean per-record loss including the full regularizer; the quantity
    /// averaged over the training set in reported metrics.
    fn record_loss(&self, x: &[f64]) -> f64;

    /// Gradient used inside the x-update (clipped where a bound applies).
    fn update_gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Unclipped gradient of `f_i`.
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Lipschitz constant of `update_gradient`.
    fn smoothness(&self) -> f64;

    /// Exact solution of `update_gradient(x) + penalty * x = b`, if one is
    /// available in closed form.
    fn solve_penalized(&self, _b: &[f64], _penalty: f64) -> Option<Vec<f64>> {
        None
    }
}

impl<T: LocalObjective + ?Sized> LocalObjective for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn weight(&self) -> usize {
        (**self).weight()
    }
    fn loss(&self, x: &[f64]) -> f64 {
        (**self).loss(x)
    }
    fn record_loss(&self, x: &[f64]) -> f64 {
        (**self).record_loss(x)
    }
    fn update_gradient(&self, x: &[f64]) -> Vec<f64> {
        (**self).update_gradient(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (**self).gradient(x)
    }
    fn smoothness(&self) -> f64 {
        (**self).smoothness()
    }
    fn solve_penalized(&self, b: &[f64], penalty: f64) -> Option<Vec<f64>> {
        (**self).solve_penalized(b, penalty)
    }
}

/// Logistic loss on one agent's shard.
#[derive(Debug, Clone)]
pub struct LogisticShard {
    pub spec: ObjectiveSpec,
    pub data: DesignMatrix,
    smoothness: f64,
}

impl LogisticShard {
    pub fn new(spec: ObjectiveSpec, data: DesignMatrix) -> Self {
        let smoothness = 0.25 * gram_top_eigenvalue(&data) + 2.0 * spec.reg();
        Self {
            spec,
            data,
            smoothness,
        }
    }
}

impl LocalObjective for LogisticShard {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn weight(&self) -> usize {
        self.data.len()
    }

    fn loss(&self, x: &[f64]) -> f64 {
        data_loss(&self.data, x) + self.spec.reg() * norm_sq(x)
    }

    fn record_loss(&self, x: &[f64]) -> f64 {
        data_loss(&self.data, x) + self.spec.lambda * norm_sq(x)
    }

    fn update_gradient(&self, x: &[f64]) -> Vec<f64> {
        clip_to_norm(self.gradient(x), self.spec.grad_bound)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        local_gradient(&self.spec, &self.data, x).expect("engine checks dimensions")
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }
}

/// `f_i(x) = 0.5 ||x - c_i||^2`, the analytic consensus fixture.
#[derive(Debug, Clone)]
pub struct QuadraticTarget {
    pub target: Vec<f64>,
}

impl LocalObjective for QuadraticTarget {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn weight(&self) -> usize {
        1
    }

    fn loss(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.target)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
    }

    fn record_loss(&self, x: &[f64]) -> f64 {
        self.loss(x)
    }

    fn update_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.gradient(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.target).map(|(a, c)| a - c).collect()
    }

    fn smoothness(&self) -> f64 {
        1.0
    }

    fn solve_penalized(&self, b: &[f64], penalty: f64) -> Option<Vec<f64>> {
        Some(
            b.iter()
                .zip(&self.target)
                .map(|(bj, cj)| (bj + cj) / (1.0 + penalty))
                .collect(),
        )
    }
}
