//! Backward adjoint equation on the scenario tree and the Hamiltonian.
//!
//! With `Ŷ = E[Y(children)]` and `Z = E[Y(children) ΔWᵀ] / Δt`, the default
//! scheme steps
//!
//! ```text
//! Y = Ŷ + Δt D_x H⁰(t, X, Ŷ, Z, π),   Y(leaf) = D_x g(X(leaf)),
//! ```
//!
//! which is the exact adjoint of the explicit Euler state recursion: the flat
//! derivative of the discrete cost at a node is then `δH⁰/δm(t, X, Ŷ, Z, π)`
//! with no discretisation error. The implicit variant evaluates `D_x b` against
//! the unknown `Y` instead and is kept for comparison.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{check_control, check_model, ControlField, ModelCoefficients, StateField};
use crate::error::{Error, Result};
use crate::measure::{Measure, Regularizer};
use crate::tree::{NodeField, ScenarioTree};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointScheme {
    #[default]
    Discrete,
    Implicit,
}

/// Adjoint processes on the tree. `y` lives on levels `0..=n_steps`; `y_hat`
/// and `z` on the decision levels.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    pub scheme: AdjointScheme,
    pub y: NodeField<DVector<f64>>,
    pub y_hat: NodeField<DVector<f64>>,
    pub z: NodeField<DMatrix<f64>>,
}

impl AdjointSolution {
    /// The `y` argument of the Hamiltonian at a decision node: `Ŷ` for the
    /// discrete scheme, `Y` for the implicit one.
    pub fn hamiltonian_y(&self, level: usize, index: usize) -> &DVector<f64> {
        match self.scheme {
            AdjointScheme::Discrete => self.y_hat.get(level, index),
            AdjointScheme::Implicit => self.y.get(level, index),
        }
    }
}

/// `H⁰ = b·y + tr(σᵀz) + f`.
pub(crate) fn h0_value(
    model: &dyn ModelCoefficients,
    t: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    m: &Measure,
) -> f64 {
    model.drift(t, x, m).dot(y) + model.diffusion(t, x, m).dot(z) + model.running_cost(t, x, m)
}

/// `D_x H⁰ = D_x bᵀ y + Σ_k e_k tr(∂_kσᵀ z) + D_x f`.
pub(crate) fn h0_dx(
    model: &dyn ModelCoefficients,
    t: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    m: &Measure,
) -> DVector<f64> {
    model.drift_dx(t, x, m).transpose() * y + sigma_term(model, t, x, z, m) + model.running_cost_dx(t, x, m)
}

fn sigma_term(model: &dyn ModelCoefficients, t: f64, x: &DVector<f64>, z: &DMatrix<f64>, m: &Measure) -> DVector<f64> {
    DVector::from_iterator(x.len(), model.diffusion_dx(t, x, m).iter().map(|dk| dk.dot(z)))
}

/// Centered `δH⁰/δm(a_i)` for every action.
pub(crate) fn h0_dm(
    model: &dyn ModelCoefficients,
    t: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    m: &Measure,
) -> Vec<f64> {
    let db = model.drift_dm(t, x, m);
    let ds = model.diffusion_dm(t, x, m);
    let df = model.running_cost_dm(t, x, m);
    db.iter()
        .zip(&ds)
        .zip(&df)
        .map(|((b, s), f)| b.dot(y) + s.dot(z) + f)
        .collect()
}

/// `H^τ(t, x, y, z, m) = H⁰ + τ h(m)`.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian_value(
    model: &dyn ModelCoefficients,
    reg: &Regularizer,
    tau: f64,
    t: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    m: &Measure,
) -> Result<f64> {
    let h = if tau == 0.0 { 0.0 } else { tau * reg.value(m)? };
    Ok(h0_value(model, t, x, y, z, m) + h)
}

/// Centered `δH^τ/δm(a_i) = δH⁰/δm(a_i) + τ δh/δm(m, a_i)`.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian_flat_derivative(
    model: &dyn ModelCoefficients,
    reg: &Regularizer,
    tau: f64,
    t: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    m: &Measure,
) -> Result<Vec<f64>> {
    let mut out = h0_dm(model, t, x, y, z, m);
    if tau != 0.0 {
        let dh = reg.flat_derivative(m)?;
        out.iter_mut().zip(&dh).for_each(|(o, d)| *o += tau * d);
    }
    Ok(out)
}

/// `D_x H⁰` at a point, exposed for diagnostics.
pub fn hamiltonian_dx(
    model: &dyn ModelCoefficients,
    t: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    m: &Measure,
) -> DVector<f64> {
    h0_dx(model, t, x, y, z, m)
}

/// `(Y, Ŷ, Z)` at one decision node.
type NodeAdjoint = (DVector<f64>, DVector<f64>, DMatrix<f64>);

pub fn solve_adjoint(
    tree: &ScenarioTree,
    model: &dyn ModelCoefficients,
    policy: &ControlField,
    state: &StateField,
    scheme: AdjointScheme,
) -> Result<AdjointSolution> {
    check_model(tree, model)?;
    check_control(tree, model, policy)?;
    let n = tree.n_steps();
    if !state.fits(tree, n + 1) {
        return Err(Error::LevelMismatch {
            expected: n + 1,
            found: state.levels(),
        });
    }
    let dt = tree.dt();
    let d = model.state_dim();
    let b = tree.branching();

    let mut y_levels: Vec<Vec<DVector<f64>>> = vec![Vec::new(); n + 1];
    let mut yh_levels: Vec<Vec<DVector<f64>>> = vec![Vec::new(); n];
    let mut z_levels: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); n];
    y_levels[n] = state.level(n).par_iter().map(|x| model.terminal_cost_dx(x)).collect();

    for level in (0..n).rev() {
        let t = tree.time(level);
        let children = &y_levels[level + 1];
        let rows: Vec<Result<NodeAdjoint>> = (0..tree.nodes_at(level))
            .into_par_iter()
            .map(|j| {
                let x = state.get(level, j);
                let m = policy.get(level, j);
                let group = &children[j * b..j * b + b];
                let mut y_hat = DVector::zeros(d);
                let mut z = DMatrix::zeros(d, tree.d_prime());
                for (yc, dw) in group.iter().zip(tree.branch_increments()) {
                    y_hat += yc;
                    z += yc * DVector::from_column_slice(dw).transpose();
                }
                y_hat /= b as f64;
                z /= b as f64 * dt;
                let y = match scheme {
                    AdjointScheme::Discrete => &y_hat + h0_dx(model, t, x, &y_hat, &z, m) * dt,
                    AdjointScheme::Implicit => {
                        let lhs = DMatrix::identity(d, d) - model.drift_dx(t, x, m).transpose() * dt;
                        let rhs = &y_hat + (model.running_cost_dx(t, x, m) + sigma_term(model, t, x, &z, m)) * dt;
                        let y = lhs.lu().solve(&rhs);
                        match y {
                            Some(y) if y.iter().all(|v| v.is_finite()) => y,
                            _ => return Err(Error::ImplicitStepDiverged { level, node: j }),
                        }
                    }
                };
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteState { level, node: j });
                }
                Ok((y, y_hat, z))
            })
            .collect();
        let mut ys = Vec::with_capacity(rows.len());
        let mut yhs = Vec::with_capacity(rows.len());
        let mut zs = Vec::with_capacity(rows.len());
        for row in rows {
            let (y, yh, z) = row?;
            ys.push(y);
            yhs.push(yh);
            zs.push(z);
        }
        y_levels[level] = ys;
        yh_levels[level] = yhs;
        z_levels[level] = zs;
    }

    Ok(AdjointSolution {
        scheme,
        y: NodeField::from_levels(tree, y_levels)?,
        y_hat: NodeField::from_levels(tree, yh_levels)?,
        z: NodeField::from_levels(tree, z_levels)?,
    })
}

/// Discrete BMO norm of `Z`: the largest `sqrt(E[Σ_{k ≥ ℓ} |Z_k|²Δt | node])`
/// over decision nodes.
pub fn bmo_diagnostic(tree: &ScenarioTree, adjoint: &AdjointSolution) -> Result<f64> {
    let n = tree.n_steps();
    if !adjoint.z.fits(tree, n) {
        return Err(Error::LevelMismatch {
            expected: n,
            found: adjoint.z.levels(),
        });
    }
    let dt = tree.dt();
    let mut tail: Vec<f64> = vec![0.0; tree.nodes_at(n)];
    let mut worst = 0.0f64;
    for level in (0..n).rev() {
        let cont = tree.average_children(&tail);
        tail = adjoint
            .z
            .level(level)
            .iter()
            .zip(cont)
            .map(|(z, c)| z.norm_squared() * dt + c)
            .collect();
        worst = tail.iter().fold(worst, |a, q| a.max(*q));
    }
    Ok(worst.sqrt())
}

/// `D_x H⁰` of the discrete scheme at every decision node, useful for
/// checking the backward recursion.
pub fn hamiltonian_dx_field(
    tree: &ScenarioTree,
    model: &dyn ModelCoefficients,
    policy: &ControlField,
    state: &StateField,
    adjoint: &AdjointSolution,
) -> NodeField<DVector<f64>> {
    NodeField::from_fn(tree, tree.n_steps(), |l, j| {
        h0_dx(
            model,
            tree.time(l),
            state.get(l, j),
            adjoint.hamiltonian_y(l, j),
            adjoint.z.get(l, j),
            policy.get(l, j),
        )
    })
}
