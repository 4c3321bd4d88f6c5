//! Model coefficients, forward simulation on the scenario tree and the
//! sensitivity process.

mod audit;
mod lq;
mod registry;

pub use audit::{assumption_audit, AuditReport, AuditSamples};
pub use lq::{LqModel, LqParams};
pub use registry::{registry_model, registry_names, SineDrift};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure::{ActionSpace, Measure};
use crate::tree::{NodeField, ScenarioTree};

/// One measure per decision node (levels `0..n_steps`).
pub type ControlField = NodeField<Measure>;
/// One state vector per node (levels `0..=n_steps`).
pub type StateField = NodeField<DVector<f64>>;

/// Coefficients `b, σ, f, g` of the controlled SDE and cost, with analytic
/// derivatives.
///
/// Measure derivatives are flat derivatives evaluated at every action and
/// centered against `m`. Second measure derivatives are exposed as quadratic
/// forms `∫∫ δ²φ/δm²(a, a') d(da) d(da')` along a signed direction `d` of zero
/// total mass, which is how they enter every estimate.
pub trait ModelCoefficients: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn initial_state(&self) -> DVector<f64>;
    fn actions(&self) -> &ActionSpace;

    fn drift(&self, t: f64, x: &DVector<f64>, m: &Measure) -> DVector<f64>;
    /// `d × d'` diffusion matrix.
    fn diffusion(&self, t: f64, x: &DVector<f64>, m: &Measure) -> DMatrix<f64>;
    fn running_cost(&self, t: f64, x: &DVector<f64>, m: &Measure) -> f64;
    fn terminal_cost(&self, x: &DVector<f64>) -> f64;

    /// Jacobian `∂b_i/∂x_k`.
    fn drift_dx(&self, t: f64, x: &DVector<f64>, m: &Measure) -> DMatrix<f64>;
    /// `∂σ/∂x_k` for `k = 0..d`, each `d × d'`.
    fn diffusion_dx(&self, t: f64, x: &DVector<f64>, m: &Measure) -> Vec<DMatrix<f64>>;
    fn running_cost_dx(&self, t: f64, x: &DVector<f64>, m: &Measure) -> DVector<f64>;
    fn terminal_cost_dx(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `δb/δm(t, x, m, a_i)` for each action.
    fn drift_dm(&self, t: f64, x: &DVector<f64>, m: &Measure) -> Vec<DVector<f64>>;
    fn diffusion_dm(&self, t: f64, x: &DVector<f64>, m: &Measure) -> Vec<DMatrix<f64>>;
    fn running_cost_dm(&self, t: f64, x: &DVector<f64>, m: &Measure) -> Vec<f64>;

    /// `D_x δb/δm(t, x, m, a_i)` for each action, each `d × d`.
    fn drift_dx_dm(&self, t: f64, x: &DVector<f64>, m: &Measure) -> Vec<DMatrix<f64>>;
    /// `∂/∂x_k δσ/δm(t, x, m, a_i)`, indexed `[action][k]`.
    fn diffusion_dx_dm(&self, t: f64, x: &DVector<f64>, m: &Measure) -> Vec<Vec<DMatrix<f64>>>;
    fn running_cost_dx_dm(&self, t: f64, x: &DVector<f64>, m: &Measure) -> Vec<DVector<f64>>;

    fn drift_d2m(&self, t: f64, x: &DVector<f64>, m: &Measure, direction: &[f64]) -> DVector<f64>;
    fn diffusion_d2m(&self, t: f64, x: &DVector<f64>, m: &Measure, direction: &[f64]) -> DMatrix<f64>;
    fn running_cost_d2m(&self, t: f64, x: &DVector<f64>, m: &Measure, direction: &[f64]) -> f64;
}

/// Checks that a control field fits the tree and the model's action set.
pub fn check_control(tree: &ScenarioTree, model: &dyn ModelCoefficients, policy: &ControlField) -> Result<()> {
    if !policy.fits(tree, tree.n_steps()) {
        return Err(Error::LevelMismatch {
            expected: tree.n_steps(),
            found: policy.levels(),
        });
    }
    let n = model.actions().len();
    for (_, _, m) in policy.iter() {
        if m.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: m.len() });
        }
    }
    Ok(())
}

/// Checks that the model and tree agree on the noise dimension.
pub fn check_model(tree: &ScenarioTree, model: &dyn ModelCoefficients) -> Result<()> {
    if model.noise_dim() != tree.d_prime() {
        return Err(Error::InvalidModel(format!(
            "model {} has noise dimension {}, tree has {}",
            model.name(),
            model.noise_dim(),
            tree.d_prime()
        )));
    }
    Ok(())
}

/// Explicit Euler scheme on the tree:
/// `X(child) = X + b(t, X, π)Δt + σ(t, X, π)ΔW(child)`.
pub fn simulate_state(tree: &ScenarioTree, model: &dyn ModelCoefficients, policy: &ControlField) -> Result<StateField> {
    check_model(tree, model)?;
    check_control(tree, model, policy)?;
    let dt = tree.dt();
    let mut levels = vec![vec![model.initial_state()]];
    for level in 0..tree.n_steps() {
        let t = tree.time(level);
        let parents = &levels[level];
        let children: Vec<DVector<f64>> = parents
            .par_iter()
            .enumerate()
            .flat_map_iter(|(j, x)| {
                let m = policy.get(level, j);
                let drift = model.drift(t, x, m) * dt;
                let sigma = model.diffusion(t, x, m);
                tree.branch_increments()
                    .iter()
                    .map(move |dw| x + &drift + &sigma * DVector::from_column_slice(dw))
                    .collect::<Vec<_>>()
            })
            .collect();
        if let Some(bad) = children.iter().position(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteState { level: level + 1, node: bad });
        }
        levels.push(children);
    }
    NodeField::from_levels(tree, levels)
}

/// `∫ δφ/δm(a) (π' - π)(da)` for vector- or matrix-valued derivative tables.
pub(crate) fn contract<T>(table: &[T], direction: &[f64]) -> T
where
    T: Clone + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let mut iter = table.iter().zip(direction);
    let (first, w) = iter.next().expect("empty derivative table");
    iter.fold(first.clone() * *w, |acc, (v, w)| acc + v.clone() * *w)
}

/// Forward Euler scheme for the linearised state equation in the direction
/// `π' - π`:
///
/// ```text
/// dV = [D_x b V + ∫ δb/δm (π' - π)] dt + [D_x σ V + ∫ δσ/δm (π' - π)] dW
/// ```
///
/// with `V(root) = 0`, where `D_x σ V = Σ_k ∂σ/∂x_k V_k`.
pub fn sensitivity_process(
    tree: &ScenarioTree,
    model: &dyn ModelCoefficients,
    policy: &ControlField,
    direction: &ControlField,
    state: &StateField,
) -> Result<StateField> {
    check_control(tree, model, direction)?;
    let dt = tree.dt();
    let d = model.state_dim();
    let mut levels = vec![vec![DVector::zeros(d)]];
    for level in 0..tree.n_steps() {
        let t = tree.time(level);
        let parents = &levels[level];
        let children: Vec<DVector<f64>> = parents
            .par_iter()
            .enumerate()
            .flat_map_iter(|(j, v)| {
                let x = state.get(level, j);
                let m = policy.get(level, j);
                let delta = m.difference(direction.get(level, j));
                let drift = (model.drift_dx(t, x, m) * v + contract(&model.drift_dm(t, x, m), &delta)) * dt;
                let mut vol = contract(&model.diffusion_dm(t, x, m), &delta);
                for (k, dk) in model.diffusion_dx(t, x, m).iter().enumerate() {
                    vol += dk * v[k];
                }
                tree.branch_increments()
                    .iter()
                    .map(move |dw| v + &drift + &vol * DVector::from_column_slice(dw))
                    .collect::<Vec<_>>()
            })
            .collect();
        levels.push(children);
    }
    NodeField::from_levels(tree, levels)
}

/// The same measure at every decision node.
pub fn constant_control(tree: &ScenarioTree, m: &Measure) -> ControlField {
    NodeField::from_fn(tree, tree.n_steps(), |_, _| m.clone())
}

/// `(1 - ε) π + ε π'` nodewise.
pub fn mix_controls(policy: &ControlField, other: &ControlField, eps: f64) -> ControlField {
    policy.map(|l, j, m| m.mix(other.get(l, j), eps))
}
