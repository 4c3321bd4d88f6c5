//! Randomized checks of relative convexity, relative smoothness and the
//! three-point inequality at the level of whole controls.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mirror::step_field;
use super::{ControlProblem, Evaluation};
use crate::dynamics::ControlField;
use crate::error::Result;
use crate::measure::{three_point_check, Measure};
use crate::tree::NodeField;

pub const PROBE_TOLERANCE: f64 = 1e-8;

/// Count and worst value of a residual that should be nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub count: usize,
    pub violations: usize,
    pub min_residual: Option<f64>,
    pub tolerance: f64,
}

impl ResidualSummary {
    pub fn new(tolerance: f64) -> Self {
        Self {
            count: 0,
            violations: 0,
            min_residual: None,
            tolerance,
        }
    }

    pub fn push(&mut self, residual: f64) {
        self.count += 1;
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(residual >= -self.tolerance) {
            self.violations += 1;
        }
        self.min_residual = Some(match self.min_residual {
            Some(m) => m.min(residual),
            None => residual,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub pairs: usize,
    pub seed: u64,
    pub lambda: f64,
    pub tau: f64,
    /// `J^τ(π') - J^τ(π) - ⟨δJ^τ(π), π' - π⟩ - τ D(π' | π)`.
    pub convexity: ResidualSummary,
    /// `λ D(π' | π) - (J^τ(π') - J^τ(π) - ⟨δJ^τ(π), π' - π⟩)`.
    pub smoothness: ResidualSummary,
    /// Three-point residual of the mirror step from `π`, probed at `π'`.
    pub three_point: ResidualSummary,
    /// Largest `(J^τ(π') - J^τ(π) - ⟨δJ^τ(π), π' - π⟩) / D(π' | π)`, an
    /// empirical smoothness constant.
    pub smoothness_ratio: f64,
}

impl ProbeReport {
    pub fn violations(&self) -> usize {
        self.convexity.violations + self.smoothness.violations + self.three_point.violations
    }
}

/// Random control: at each node a flat Dirichlet draw mixed 9:1 with the
/// reference, so every atom is positive.
pub fn random_control(problem: &ControlProblem, rng: &mut ChaCha8Rng) -> ControlField {
    let base = Measure::reference_measure(problem.reference().to_vec()).expect("validated reference");
    let n = base.len();
    NodeField::from_fn(problem.tree(), problem.tree().n_steps(), |_, _| {
        let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        base.renormalized(draws.iter().map(|d| d / total).collect()).mix(&base, 0.1)
    })
}

/// Seeded random pairs `(π, π')`.
pub(crate) fn random_pairs(problem: &ControlProblem, count: usize, seed: u64) -> Vec<(ControlField, ControlField)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let a = random_control(problem, &mut rng);
            let b = random_control(problem, &mut rng);
            (a, b)
        })
        .collect()
}

/// `(J^τ(π') - J^τ(π) - ⟨δJ^τ(π), π' - π⟩, D(π' | π))`.
pub(crate) fn expansion(
    problem: &ControlProblem,
    policy: &ControlField,
    eval: &Evaluation,
    other: &ControlField,
    other_cost: f64,
) -> Result<(f64, f64)> {
    let linear = problem.pairing(&eval.gradient, policy, other);
    let remainder = other_cost - eval.cost.j_tau - linear;
    Ok((remainder, problem.divergence(other, policy)?))
}

pub fn theorem_probes(problem: &ControlProblem, lambda: f64, pairs: usize, seed: u64) -> Result<ProbeReport> {
    let tau = problem.tau();
    let mut report = ProbeReport {
        pairs,
        seed,
        lambda,
        tau,
        convexity: ResidualSummary::new(PROBE_TOLERANCE),
        smoothness: ResidualSummary::new(PROBE_TOLERANCE),
        three_point: ResidualSummary::new(PROBE_TOLERANCE),
        smoothness_ratio: 0.0,
    };
    for (pi, other) in random_pairs(problem, pairs, seed) {
        let eval = problem.evaluate(&pi)?;
        let other_cost = problem.cost(&other)?.j_tau;
        let (remainder, div) = expansion(problem, &pi, &eval, &other, other_cost)?;
        report.convexity.push(remainder - tau * div);
        report.smoothness.push(lambda * div - remainder);
        if div > 0.0 {
            report.smoothness_ratio = report.smoothness_ratio.max(remainder / div);
        }

        let star = step_field(problem, &pi, &eval.gradient, lambda)?;
        let mut total = 0.0;
        for level in 0..problem.tree().n_steps() {
            let parts: Vec<Result<f64>> = (0..problem.tree().nodes_at(level))
                .into_par_iter()
                .map(|j| {
                    three_point_check(
                        problem.regularizer(),
                        pi.get(level, j),
                        eval.gradient.get(level, j),
                        lambda,
                        star.get(level, j),
                        other.get(level, j),
                    )
                })
                .collect();
            let mut s = 0.0;
            for p in parts {
                s += p?;
            }
            total += problem.node_weight(level) * s;
        }
        report.three_point.push(total);
    }
    Ok(report)
}
