//! Finite probability measures over an action set, the regularizers acting
//! on them, and the mirror-step (prox) solvers.
//!
//! Every measure carries its reference measure `ϱ` explicitly, so densities
//! `dm/dϱ` are always available. Integrals over the action set are plain sums.

mod prox;
mod regularizer;
mod sinkhorn;

pub use prox::{
    bregman_of_bregman_check, minimize_linear_plus_h, mirror_step, project_density,
    three_point_check, variational_residual,
};
pub use regularizer::{EntropicOt, Regularizer};
pub use sinkhorn::{log_sum_exp, sinkhorn_potentials, SinkhornResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-12;

/// A finite action set `A = {a_0, …, a_{N-1}}`, each action a point in `R^k`.
///
/// Index 0 plays the role of the anchor `a_0` unless a regularizer says otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    points: Vec<Vec<f64>>,
}

impl ActionSpace {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidActionSpace("need at least one action".into()));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidActionSpace("actions must have dimension >= 1".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidActionSpace(format!(
                    "action {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidActionSpace(format!("action {i} is not finite")));
            }
            if points[..i].iter().any(|q| q == p) {
                return Err(Error::InvalidActionSpace(format!("action {i} is duplicated")));
            }
        }
        Ok(Self { points })
    }

    /// `n` equally spaced scalar actions on `[lo, hi]`.
    pub fn uniform_grid(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n == 1 {
            return Self::new(vec![vec![lo]]);
        }
        let step = (hi - lo) / (n - 1) as f64;
        Self::new((0..n).map(|i| vec![lo + step * i as f64]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// `c(i, j) = |a_i - a_j|^2`.
    pub fn squared_distance_cost(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|a| {
                self.points
                    .iter()
                    .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
                    .collect()
            })
            .collect()
    }
}

/// A probability vector over `N` actions together with its reference measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    weights: Vec<f64>,
    reference: Vec<f64>,
}

impl Measure {
    /// Validates both vectors: nonnegative weights summing to one, strictly
    /// positive reference weights summing to one.
    pub fn new(weights: Vec<f64>, reference: Vec<f64>) -> Result<Self> {
        check_reference(&reference)?;
        if weights.len() != reference.len() {
            return Err(Error::DimensionMismatch {
                expected: reference.len(),
                found: weights.len(),
            });
        }
        check_probability(&weights, "weights")?;
        Ok(Self { weights, reference })
    }

    /// The reference measure itself, `m = ϱ`.
    pub fn reference_measure(reference: Vec<f64>) -> Result<Self> {
        Self::new(reference.clone(), reference)
    }

    /// Uniform weights against a uniform reference.
    pub fn uniform(n: usize) -> Self {
        let w = vec![1.0 / n as f64; n];
        Self {
            weights: w.clone(),
            reference: w,
        }
    }

    /// Same reference, new weights (validated).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(weights, self.reference.clone())
    }

    /// Same reference, weights rescaled to sum to one. Used for outputs of
    /// closed-form updates whose sum is one up to rounding.
    pub(crate) fn renormalized(&self, mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self {
            weights,
            reference: self.reference.clone(),
        }
    }

    /// The reference measure `ϱ` as a measure.
    pub fn as_reference(&self) -> Self {
        Self {
            weights: self.reference.clone(),
            reference: self.reference.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn density(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.reference)
            .map(|(w, r)| w / r)
            .collect()
    }

    /// `∫ v dm`.
    pub fn integrate(&self, v: &[f64]) -> f64 {
        self.weights.iter().zip(v).map(|(w, x)| w * x).sum()
    }

    /// `(1 - eps) * self + eps * other`.
    pub fn mix(&self, other: &Measure, eps: f64) -> Measure {
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a + eps * (b - a))
            .collect();
        Measure {
            weights,
            reference: self.reference.clone(),
        }
    }

    /// Signed difference `other - self` as a vector of weights.
    pub fn difference(&self, other: &Measure) -> Vec<f64> {
        other
            .weights
            .iter()
            .zip(&self.weights)
            .map(|(b, a)| b - a)
            .collect()
    }

    /// Total variation norm of the signed measure `self - other`, i.e. `Σ|w_i - w'_i|`.
    pub fn tv_norm(&self, other: &Measure) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn sup_distance(&self, other: &Measure) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn first_zero_atom(&self) -> Option<usize> {
        self.weights.iter().position(|&w| w <= 0.0)
    }

    pub(crate) fn same_support_shape(&self, other: &Measure) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        if self.reference != other.reference {
            return Err(Error::InvalidMeasure("measures use different reference measures".into()));
        }
        Ok(())
    }
}

fn check_reference(reference: &[f64]) -> Result<()> {
    if reference.is_empty() {
        return Err(Error::InvalidMeasure("empty reference measure".into()));
    }
    if let Some(i) = reference.iter().position(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidMeasure(format!(
            "reference weight {i} must be strictly positive"
        )));
    }
    let total: f64 = reference.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidMeasure(format!("reference sums to {total}")));
    }
    Ok(())
}

fn check_probability(weights: &[f64], what: &str) -> Result<()> {
    if let Some(i) = weights.iter().position(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidMeasure(format!("{what}[{i}] = {} is negative or not finite", weights[i])));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidMeasure(format!("{what} sum to {total}")));
    }
    Ok(())
}
