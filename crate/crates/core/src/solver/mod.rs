//! Mirror descent on the scenario tree: cost evaluation, the iteration
//! itself, step calibration, oracles and the inequality probes.

mod calibrate;
mod mirror;
mod oracle;
mod probes;
mod rate;
mod report;

pub use calibrate::{calibrate_lambda, Calibration};
pub use mirror::{mirror_iterate, run_mirror_descent, LambdaChoice, MirrorDescentConfig};
pub use oracle::{oracle_optimal_control, OracleConfig, OracleMethod, OracleSolution, GRID_SLACK};
pub use probes::{random_control, theorem_probes, ProbeReport, ResidualSummary};
pub use rate::{fit_rate, RateFit, GEOMETRIC_R_SQUARED, GAP_FLOOR};
pub use report::{ConvergenceReport, IterationRecord, OracleSummary, ProblemSummary};

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{h0_dm, solve_adjoint, AdjointScheme, AdjointSolution};
use crate::dynamics::{check_control, check_model, constant_control, simulate_state, ControlField, ModelCoefficients, StateField};
use crate::error::{Error, Result};
use crate::measure::{Measure, Regularizer};
use crate::tree::{NodeField, ScenarioTree};

/// A regularized control problem on a scenario tree:
/// `J^τ(π) = E[Σ_ℓ (f(t_ℓ, X_ℓ, π_ℓ) + τ h(π_ℓ)) Δt + g(X_n)]`.
#[derive(Clone)]
pub struct ControlProblem {
    tree: ScenarioTree,
    model: Arc<dyn ModelCoefficients>,
    regularizer: Regularizer,
    reference: Vec<f64>,
    tau: f64,
    scheme: AdjointScheme,
}

impl std::fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("tree", &self.tree)
            .field("model", &self.model.name())
            .field("regularizer", &self.regularizer)
            .field("tau", &self.tau)
            .field("scheme", &self.scheme)
            .finish()
    }
}

/// Running cost, `h`, `δH⁰/δm` and `δH^τ/δm` at one node.
type NodeTerms = (f64, f64, Vec<f64>, Vec<f64>);

/// `J⁰`, `ℋ = E[Σ h(π_ℓ) Δt]` and `J^τ = J⁰ + τℋ`. `ℋ` is only evaluated
/// when `τ > 0` and is reported as 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub j0: f64,
    pub entropy: f64,
    pub j_tau: f64,
}

/// Everything computed from one forward/backward sweep at a control.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: CostBreakdown,
    pub state: StateField,
    pub adjoint: AdjointSolution,
    /// `δH⁰/δm` per decision node.
    pub hamiltonian_gradient: NodeField<Vec<f64>>,
    /// `δH^τ/δm = δH⁰/δm + τ δh/δm`, the mirror-step gradient.
    pub gradient: NodeField<Vec<f64>>,
}

impl ControlProblem {
    /// Uniform reference measure and the discrete adjoint scheme.
    pub fn new(tree: ScenarioTree, model: Arc<dyn ModelCoefficients>, regularizer: Regularizer, tau: f64) -> Result<Self> {
        check_model(&tree, model.as_ref())?;
        let n = model.actions().len();
        regularizer.check_size(n)?;
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be finite and nonnegative, got {tau}")));
        }
        Ok(Self {
            tree,
            model,
            regularizer,
            reference: vec![1.0 / n as f64; n],
            tau,
            scheme: AdjointScheme::Discrete,
        })
    }

    pub fn with_reference(mut self, reference: Vec<f64>) -> Result<Self> {
        if reference.len() != self.reference.len() {
            return Err(Error::DimensionMismatch {
                expected: self.reference.len(),
                found: reference.len(),
            });
        }
        Measure::reference_measure(reference.clone())?;
        self.reference = reference;
        Ok(self)
    }

    pub fn with_scheme(mut self, scheme: AdjointScheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// Same problem with a different `τ`.
    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be finite and nonnegative, got {tau}")));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn model(&self) -> &dyn ModelCoefficients {
        self.model.as_ref()
    }

    pub fn model_arc(&self) -> Arc<dyn ModelCoefficients> {
        Arc::clone(&self.model)
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn scheme(&self) -> AdjointScheme {
        self.scheme
    }

    /// `ϱ` at every decision node.
    pub fn reference_control(&self) -> ControlField {
        let m = Measure::reference_measure(self.reference.clone()).expect("reference validated on construction");
        constant_control(&self.tree, &m)
    }

    /// `p_ℓ Δt`, the weight of a decision node at `level` in every sum over nodes.
    pub fn node_weight(&self, level: usize) -> f64 {
        self.tree.node_probability(level) * self.tree.dt()
    }

    fn check_policy(&self, policy: &ControlField) -> Result<()> {
        check_control(&self.tree, self.model(), policy)?;
        for (_, _, m) in policy.iter() {
            if m.reference() != self.reference.as_slice() {
                return Err(Error::InvalidMeasure("control measure has a different reference".into()));
            }
        }
        Ok(())
    }

    /// Forward sweep, backward sweep and nodewise Hamiltonian gradients.
    pub fn evaluate(&self, policy: &ControlField) -> Result<Evaluation> {
        self.check_policy(policy)?;
        let model = self.model();
        let tree = &self.tree;
        let state = simulate_state(tree, model, policy)?;
        let adjoint = solve_adjoint(tree, model, policy, &state, self.scheme)?;
        let n = tree.n_steps();

        let mut running = 0.0;
        let mut entropy = 0.0;
        let mut combined = 0.0;
        let mut dh0_levels = Vec::with_capacity(n);
        let mut grad_levels = Vec::with_capacity(n);
        for level in 0..n {
            let t = tree.time(level);
            let rows: Vec<Result<NodeTerms>> = (0..tree.nodes_at(level))
                .into_par_iter()
                .map(|j| {
                    let x = state.get(level, j);
                    let m = policy.get(level, j);
                    let f = model.running_cost(t, x, m);
                    let dh0 = h0_dm(model, t, x, adjoint.hamiltonian_y(level, j), adjoint.z.get(level, j), m);
                    if self.tau > 0.0 {
                        let (h, dh) = self.regularizer.evaluate(m)?;
                        let grad = dh0.iter().zip(&dh).map(|(a, b)| a + self.tau * b).collect();
                        Ok((f, h, dh0, grad))
                    } else {
                        let grad = dh0.clone();
                        Ok((f, 0.0, dh0, grad))
                    }
                })
                .collect();
            let w = self.node_weight(level);
            let mut dh0s = Vec::with_capacity(rows.len());
            let mut grads = Vec::with_capacity(rows.len());
            let (mut f_sum, mut h_sum, mut both) = (0.0, 0.0, 0.0);
            for row in rows {
                let (f, h, dh0, grad) = row?;
                f_sum += f;
                h_sum += h;
                both += f + self.tau * h;
                dh0s.push(dh0);
                grads.push(grad);
            }
            running += w * f_sum;
            entropy += w * h_sum;
            combined += w * both;
            dh0_levels.push(dh0s);
            grad_levels.push(grads);
        }
        let terminal: f64 = state.level(n).iter().map(|x| model.terminal_cost(x)).sum::<f64>() * tree.node_probability(n);
        let j0 = running + terminal;
        let j_tau = j0 + self.tau * entropy;
        debug_assert!((j_tau - (combined + terminal)).abs() <= 1e-12 * (1.0 + j_tau.abs()));
        Ok(Evaluation {
            cost: CostBreakdown { j0, entropy, j_tau },
            state,
            adjoint,
            hamiltonian_gradient: NodeField::from_levels(tree, dh0_levels)?,
            gradient: NodeField::from_levels(tree, grad_levels)?,
        })
    }

    pub fn cost(&self, policy: &ControlField) -> Result<CostBreakdown> {
        Ok(self.evaluate(policy)?.cost)
    }

    /// `Σ_nodes p_ℓ Δt ⟨field(node), π'(node) - π(node)⟩`.
    pub fn pairing(&self, field: &NodeField<Vec<f64>>, policy: &ControlField, other: &ControlField) -> f64 {
        let mut total = 0.0;
        for level in 0..self.tree.n_steps() {
            let mut s = 0.0;
            for (j, m) in policy.level(level).iter().enumerate() {
                let g = field.get(level, j);
                s += m.difference(other.get(level, j)).iter().zip(g).map(|(d, g)| d * g).sum::<f64>();
            }
            total += self.node_weight(level) * s;
        }
        total
    }

    /// Directional derivative of `J^τ` at `policy` towards `direction`, from a
    /// fresh adjoint solve at `policy`.
    pub fn first_variation(&self, policy: &ControlField, direction: &ControlField) -> Result<f64> {
        self.check_policy(direction)?;
        let eval = self.evaluate(policy)?;
        Ok(self.pairing(&eval.gradient, policy, direction))
    }

    /// Same as [`first_variation`](Self::first_variation) for `J⁰` alone.
    pub fn first_variation_unregularized(&self, policy: &ControlField, direction: &ControlField) -> Result<f64> {
        self.check_policy(direction)?;
        let eval = self.evaluate(policy)?;
        Ok(self.pairing(&eval.hamiltonian_gradient, policy, direction))
    }

    /// `Σ_nodes p_ℓ Δt D_h(π'(node) | π(node))`.
    pub fn divergence(&self, p_prime: &ControlField, p: &ControlField) -> Result<f64> {
        let mut total = 0.0;
        for level in 0..self.tree.n_steps() {
            let parts: Vec<Result<f64>> = (0..self.tree.nodes_at(level))
                .into_par_iter()
                .map(|j| self.regularizer.bregman(p_prime.get(level, j), p.get(level, j)))
                .collect();
            let mut s = 0.0;
            for part in parts {
                s += part?;
            }
            total += self.node_weight(level) * s;
        }
        Ok(total)
    }

    /// Largest sup-norm difference between two controls over all nodes.
    pub fn sup_distance(&self, a: &ControlField, b: &ControlField) -> f64 {
        a.iter()
            .map(|(l, j, m)| m.sup_distance(b.get(l, j)))
            .fold(0.0, f64::max)
    }

    /// Root state, convenient for reports.
    pub fn initial_state(&self) -> DVector<f64> {
        self.model.initial_state()
    }
}

/// Controls as plain weight arrays, for serialization.
pub fn control_weights(policy: &ControlField) -> Vec<Vec<Vec<f64>>> {
    (0..policy.levels())
        .map(|l| policy.level(l).iter().map(|m| m.weights().to_vec()).collect())
        .collect()
}
