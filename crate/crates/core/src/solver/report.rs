use serde::{Deserialize, Serialize};

use super::probes::ResidualSummary;
use super::rate::RateFit;
use super::{ControlProblem, CostBreakdown};
use crate::adjoint::AdjointScheme;

/// What was solved, enough to decide whether two reports are comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub model: String,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub initial_state: Vec<f64>,
    pub horizon: f64,
    pub n_steps: usize,
    pub d_prime: usize,
    pub actions: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
    pub regularizer: String,
    pub tau: f64,
    pub adjoint_scheme: AdjointScheme,
}

impl ProblemSummary {
    pub fn of(problem: &ControlProblem) -> Self {
        let model = problem.model();
        let tree = problem.tree();
        Self {
            model: model.name().to_string(),
            state_dim: model.state_dim(),
            noise_dim: model.noise_dim(),
            initial_state: model.initial_state().iter().copied().collect(),
            horizon: tree.horizon(),
            n_steps: tree.n_steps(),
            d_prime: tree.d_prime(),
            actions: model.actions().points().to_vec(),
            reference: problem.reference().to_vec(),
            regularizer: problem.regularizer().name().to_string(),
            tau: problem.tau(),
            adjoint_scheme: problem.scheme(),
        }
    }

    /// Same model, tree and action set; regularizer and `τ` may differ.
    pub fn compatible_with(&self, other: &ProblemSummary) -> bool {
        self.model == other.model
            && self.state_dim == other.state_dim
            && self.noise_dim == other.noise_dim
            && self.initial_state == other.initial_state
            && self.horizon == other.horizon
            && self.n_steps == other.n_steps
            && self.d_prime == other.d_prime
            && self.actions == other.actions
    }
}

/// Values at iterate `πⁿ`. `step_divergence` is `Σ p Δt D_h(π^{n+1} | πⁿ)`
/// and is absent for the last iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: usize,
    pub j0: f64,
    pub entropy: f64,
    pub j_tau: f64,
    pub step_divergence: Option<f64>,
    /// `J^τ(πⁿ) - J^τ(π*)`.
    pub gap: Option<f64>,
    /// `Σ p Δt D_h(π* | πⁿ)`.
    pub oracle_divergence: Option<f64>,
    /// Right-hand side of the convergence bound at `n`.
    pub bound_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub method: String,
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    /// `D₀ = Σ p Δt D_h(π* | π⁰)`.
    pub initial_divergence: f64,
    /// Whether `J^τ(π*)` lies below every iterate (within the method's slack).
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub problem: ProblemSummary,
    pub lambda: f64,
    pub lambda_calibrated: bool,
    /// Every candidate tried by the calibration, in order.
    pub calibration_candidates: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_tolerance: f64,
    pub history: Vec<IterationRecord>,
    pub dissipation_violations: usize,
    /// Largest `J^τ(π^{n+1}) - J^τ(πⁿ)` seen; negative when the cost always fell.
    pub max_cost_increase: f64,
    /// Along consecutive iterates: `λ D - (J^τ(π') - J^τ(π) - ⟨δJ^τ, π' - π⟩)`.
    pub smoothness: ResidualSummary,
    /// Along consecutive iterates: `J^τ(π') - J^τ(π) - ⟨δJ^τ, π' - π⟩ - τ D`.
    pub convexity: ResidualSummary,
    pub final_cost: CostBreakdown,
    /// BMO diagnostic of `Z` at the final iterate.
    pub final_bmo: f64,
    /// `1 - τ/λ`.
    pub theoretical_rate: f64,
    pub oracle: Option<OracleSummary>,
    pub rates: Vec<RateFit>,
    /// Final control, `[level][node][action]`.
    pub final_policy: Vec<Vec<Vec<f64>>>,
}

impl ConvergenceReport {
    pub fn gaps(&self) -> Option<Vec<f64>> {
        self.history.iter().map(|r| r.gap).collect()
    }

    pub fn step_divergences(&self) -> Vec<f64> {
        self.history.iter().filter_map(|r| r.step_divergence).collect()
    }

    /// Last recorded step divergence.
    pub fn tail_step_divergence(&self) -> Option<f64> {
        self.history.iter().rev().find_map(|r| r.step_divergence)
    }
}
