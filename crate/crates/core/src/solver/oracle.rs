//! Reference optima used to measure gaps.
//!
//! For `τ > 0` the optimum is the fixed point of the nodewise Hamiltonian
//! minimization `π = argmin_m ⟨δH⁰/δm(Θ(π)), m⟩ + τ h(m)`, reached by damped
//! iteration. For `τ = 0` small trees are searched exhaustively on a simplex
//! grid with dynamic programming over the tree.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ControlProblem;
use crate::dynamics::ControlField;
use crate::error::{Error, Result};
use crate::measure::{minimize_linear_plus_h, Measure};
use crate::tree::NodeField;

/// A fixed point is accepted only if the nodewise argmin moves it by at most
/// this much in sup norm.
pub const ORACLE_CERTIFICATE: f64 = 1e-10;
/// Grid optima may sit above the true optimum by up to this much.
pub const GRID_SLACK: f64 = 2e-3;
const GRID_MAX_NODES: usize = 3;
const GRID_MAX_ACTIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub max_iters: usize,
    /// Stop once a damped update changes the control by at most this much.
    pub tolerance: f64,
    pub damping: f64,
    /// Grid resolution `1/k` for the `τ = 0` search.
    pub grid_divisions: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tolerance: 1e-11,
            damping: 0.5,
            grid_divisions: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Pontryagin,
    Grid,
}

impl OracleMethod {
    pub fn name(&self) -> &'static str {
        match self {
            OracleMethod::Pontryagin => "pontryagin",
            OracleMethod::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub method: OracleMethod,
    pub policy: ControlField,
    /// `J^τ(π*)`.
    pub value: f64,
    /// Fixed-point residual for the Pontryagin oracle, grid spacing for the grid.
    pub residual: f64,
    pub iterations: usize,
}

pub fn oracle_optimal_control(problem: &ControlProblem, config: &OracleConfig) -> Result<OracleSolution> {
    if problem.tau() > 0.0 {
        pontryagin(problem, config)
    } else {
        grid(problem, config)
    }
}

/// Nodewise exact minimizer of `⟨δH⁰/δm, m⟩ + τ h(m)` at the current control.
fn best_response(problem: &ControlProblem, policy: &ControlField) -> Result<(ControlField, f64)> {
    let eval = problem.evaluate(policy)?;
    let tree = problem.tree();
    let mut levels = Vec::with_capacity(tree.n_steps());
    for level in 0..tree.n_steps() {
        let row: Vec<Result<Measure>> = (0..tree.nodes_at(level))
            .into_par_iter()
            .map(|j| {
                minimize_linear_plus_h(
                    problem.regularizer(),
                    problem.reference(),
                    eval.hamiltonian_gradient.get(level, j),
                    problem.tau(),
                )
            })
            .collect();
        levels.push(row.into_iter().collect::<Result<Vec<_>>>()?);
    }
    let target = NodeField::from_levels(tree, levels)?;
    let residual = problem.sup_distance(&target, policy);
    Ok((target, residual))
}

fn pontryagin(problem: &ControlProblem, config: &OracleConfig) -> Result<OracleSolution> {
    let mut policy = problem.reference_control();
    let mut theta = config.damping;
    let mut previous = f64::INFINITY;
    let mut change = f64::INFINITY;
    for iteration in 1..=config.max_iters {
        let (target, residual) = best_response(problem, &policy)?;
        change = theta * residual;
        if change <= config.tolerance {
            if residual > ORACLE_CERTIFICATE {
                return Err(Error::OracleDidNotConverge {
                    iterations: iteration,
                    change: residual,
                });
            }
            let value = problem.cost(&policy)?.j_tau;
            return Ok(OracleSolution {
                method: OracleMethod::Pontryagin,
                policy,
                value,
                residual,
                iterations: iteration,
            });
        }
        if residual > previous * (1.0 + 1e-6) && residual > 100.0 * config.tolerance {
            theta = (theta * 0.5).max(1.0 / 1024.0);
        }
        previous = residual;
        policy = crate::dynamics::mix_controls(&policy, &target, theta);
    }
    Err(Error::OracleDidNotConverge {
        iterations: config.max_iters,
        change,
    })
}

fn simplex_grid(reference: &[f64], divisions: usize) -> Result<Vec<Measure>> {
    let k = divisions as f64;
    let weights: Vec<Vec<f64>> = match reference.len() {
        1 => vec![vec![1.0]],
        2 => (0..=divisions).map(|i| vec![i as f64 / k, (divisions - i) as f64 / k]).collect(),
        _ => (0..=divisions)
            .flat_map(|i| {
                (0..=divisions - i).map(move |j| vec![i as f64 / k, j as f64 / k, (divisions - i - j) as f64 / k])
            })
            .collect(),
    };
    weights.into_iter().map(|w| Measure::new(w, reference.to_vec())).collect()
}

struct GridSearch<'a> {
    problem: &'a ControlProblem,
    grid: Vec<Measure>,
}

impl GridSearch<'_> {
    /// Optimal cost-to-go from state `x` at `level`, with the minimizing grid index.
    fn best(&self, level: usize, x: &DVector<f64>, parallel: bool) -> (f64, usize) {
        let eval = |idx: usize| -> (f64, usize) {
            let tree = self.problem.tree();
            let model = self.problem.model();
            let t = tree.time(level);
            let m = &self.grid[idx];
            let drift = model.drift(t, x, m) * tree.dt();
            let sigma = model.diffusion(t, x, m);
            let mut future = 0.0;
            // Without noise every child has the same state.
            let mut last: Option<(DVector<f64>, f64)> = None;
            for dw in tree.branch_increments() {
                let child = x + &drift + &sigma * DVector::from_column_slice(dw);
                let v = match &last {
                    Some((prev, v)) if *prev == child => *v,
                    _ => self.value(level + 1, &child),
                };
                future += v;
                last = Some((child, v));
            }
            let total = model.running_cost(t, x, m) * tree.dt() + future / tree.branching() as f64;
            (total, idx)
        };
        let pick = |a: (f64, usize), b: (f64, usize)| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a };
        if parallel {
            (0..self.grid.len())
                .into_par_iter()
                .map(eval)
                .reduce(|| (f64::INFINITY, usize::MAX), pick)
        } else {
            (0..self.grid.len()).map(eval).fold((f64::INFINITY, usize::MAX), pick)
        }
    }

    fn value(&self, level: usize, x: &DVector<f64>) -> f64 {
        if level == self.problem.tree().n_steps() {
            self.problem.model().terminal_cost(x)
        } else {
            self.best(level, x, false).0
        }
    }
}

fn grid(problem: &ControlProblem, config: &OracleConfig) -> Result<OracleSolution> {
    let tree = problem.tree();
    let model = problem.model();
    let actions = model.actions().len();
    if tree.decision_nodes() > GRID_MAX_NODES || actions > GRID_MAX_ACTIONS {
        return Err(Error::OracleTooLarge {
            decision_nodes: tree.decision_nodes(),
            actions,
        });
    }
    if config.grid_divisions == 0 {
        return Err(Error::InvalidConfig("grid oracle needs at least one division".into()));
    }
    let search = GridSearch {
        problem,
        grid: simplex_grid(problem.reference(), config.grid_divisions)?,
    };

    // Walk the tree forward, choosing each node's grid argmin at its realized state.
    let mut states = vec![model.initial_state()];
    let mut levels = Vec::with_capacity(tree.n_steps());
    for level in 0..tree.n_steps() {
        let t = tree.time(level);
        let mut row = Vec::with_capacity(states.len());
        let mut children = Vec::with_capacity(states.len() * tree.branching());
        for x in &states {
            let (_, idx) = search.best(level, x, true);
            let m = search.grid[idx].clone();
            let drift = model.drift(t, x, &m) * tree.dt();
            let sigma = model.diffusion(t, x, &m);
            for dw in tree.branch_increments() {
                children.push(x + &drift + &sigma * DVector::from_column_slice(dw));
            }
            row.push(m);
        }
        levels.push(row);
        states = children;
    }
    let policy = NodeField::from_levels(tree, levels)?;
    let value = problem.cost(&policy)?.j_tau;
    Ok(OracleSolution {
        method: OracleMethod::Grid,
        policy,
        value,
        residual: 1.0 / config.grid_divisions as f64,
        iterations: search.grid.len(),
    })
}
