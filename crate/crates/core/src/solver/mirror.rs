use rayon::prelude::*;

use super::calibrate::calibrate_lambda;
use super::oracle::{OracleMethod, OracleSolution, GRID_SLACK, ORACLE_CERTIFICATE};
use super::probes::ResidualSummary;
use super::rate::fit_rate;
use super::report::{ConvergenceReport, IterationRecord, OracleSummary, ProblemSummary};
use super::{control_weights, ControlProblem, Evaluation};
use crate::adjoint::bmo_diagnostic;
use crate::dynamics::ControlField;
use crate::error::{Error, Result};
use crate::measure::mirror_step;
use crate::tree::NodeField;

/// Allowed increase of `J^τ` between iterates before it counts as a
/// dissipation violation.
pub const DISSIPATION_TOLERANCE: f64 = 1e-10;
/// Allowed negative smoothness or convexity residual along the run.
pub const EXPANSION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    /// Doubling search, see [`calibrate_lambda`].
    Auto,
}

#[derive(Debug, Clone)]
pub struct MirrorDescentConfig {
    pub lambda: LambdaChoice,
    pub max_iters: usize,
    /// Stop once `Σ p Δt D_h(π^{n+1} | πⁿ)` is at or below this.
    pub tol: f64,
    /// Defaults to the reference measure at every node.
    pub initial: Option<ControlField>,
    pub seed: u64,
    /// Random pairs used by the calibration.
    pub probe_pairs: usize,
}

impl Default for MirrorDescentConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaChoice::Auto,
            max_iters: 200,
            tol: 1e-14,
            initial: None,
            seed: 0,
            probe_pairs: 10,
        }
    }
}

/// Nodewise mirror step from `policy` along `gradient`.
pub(crate) fn step_field(
    problem: &ControlProblem,
    policy: &ControlField,
    gradient: &NodeField<Vec<f64>>,
    lambda: f64,
) -> Result<ControlField> {
    let tree = problem.tree();
    let mut levels = Vec::with_capacity(tree.n_steps());
    for level in 0..tree.n_steps() {
        let next: Vec<Result<_>> = policy
            .level(level)
            .par_iter()
            .enumerate()
            .map(|(j, m)| mirror_step(problem.regularizer(), m, gradient.get(level, j), lambda))
            .collect();
        levels.push(next.into_iter().collect::<Result<Vec<_>>>()?);
    }
    NodeField::from_levels(tree, levels)
}

/// One iteration: forward and backward sweeps at `policy`, then the
/// nodewise mirror step. Returns the next control and the evaluation at
/// `policy`.
pub fn mirror_iterate(problem: &ControlProblem, policy: &ControlField, lambda: f64) -> Result<(ControlField, Evaluation)> {
    let eval = problem.evaluate(policy)?;
    let next = step_field(problem, policy, &eval.gradient, lambda)?;
    Ok((next, eval))
}

pub(crate) fn initial_control(problem: &ControlProblem, config: &MirrorDescentConfig) -> ControlField {
    config.initial.clone().unwrap_or_else(|| problem.reference_control())
}

/// Runs mirror descent until `max_iters` iterations or the step-divergence
/// tolerance. When an oracle is given, gaps, oracle divergences and bound
/// values are filled in.
pub fn run_mirror_descent(
    problem: &ControlProblem,
    config: &MirrorDescentConfig,
    oracle: Option<&OracleSolution>,
) -> Result<ConvergenceReport> {
    let tau = problem.tau();
    let (lambda, calibrated, candidates) = match config.lambda {
        LambdaChoice::Fixed(l) => (l, false, Vec::new()),
        LambdaChoice::Auto => {
            let c = calibrate_lambda(problem, config)?;
            (c.lambda, true, c.candidates)
        }
    };
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    if tau > lambda {
        return Err(Error::InvalidConfig(format!("tau ({tau}) exceeds lambda ({lambda})")));
    }

    let mut policy = initial_control(problem, config);
    let mut eval = problem.evaluate(&policy)?;
    let d0 = match oracle {
        Some(o) => Some(problem.divergence(&o.policy, &policy)?),
        None => None,
    };
    let bound = |n: usize| -> Option<f64> {
        let d0 = d0?;
        if tau > 0.0 {
            Some(lambda * (1.0 - tau / lambda).powi(n as i32) * d0)
        } else if n > 0 {
            Some(lambda * d0 / n as f64)
        } else {
            None
        }
    };
    let record = |n: usize, eval: &Evaluation, policy: &ControlField| -> Result<IterationRecord> {
        let (gap, oracle_divergence) = match oracle {
            Some(o) => (Some(eval.cost.j_tau - o.value), Some(problem.divergence(&o.policy, policy)?)),
            None => (None, None),
        };
        Ok(IterationRecord {
            n,
            j0: eval.cost.j0,
            entropy: eval.cost.entropy,
            j_tau: eval.cost.j_tau,
            step_divergence: None,
            gap,
            oracle_divergence,
            bound_value: bound(n),
        })
    };

    let mut history = Vec::new();
    let mut violations = 0;
    let mut max_increase = f64::NEG_INFINITY;
    let mut smoothness = ResidualSummary::new(EXPANSION_TOLERANCE);
    let mut convexity = ResidualSummary::new(EXPANSION_TOLERANCE);
    let mut converged = false;
    let mut n = 0;
    loop {
        let mut rec = record(n, &eval, &policy)?;
        if n == config.max_iters {
            history.push(rec);
            break;
        }
        let next = step_field(problem, &policy, &eval.gradient, lambda)?;
        let next_eval = problem.evaluate(&next)?;
        let step = problem.divergence(&next, &policy)?;
        rec.step_divergence = Some(step);
        history.push(rec);

        let increase = next_eval.cost.j_tau - eval.cost.j_tau;
        if increase > DISSIPATION_TOLERANCE {
            violations += 1;
        }
        max_increase = max_increase.max(increase);
        let remainder = next_eval.cost.j_tau - eval.cost.j_tau - problem.pairing(&eval.gradient, &policy, &next);
        smoothness.push(lambda * step - remainder);
        convexity.push(remainder - tau * step);

        policy = next;
        eval = next_eval;
        n += 1;
        if step <= config.tol {
            converged = true;
            history.push(record(n, &eval, &policy)?);
            break;
        }
    }

    let oracle_summary = oracle.map(|o| {
        let best = history.iter().map(|r| r.j_tau).fold(f64::INFINITY, f64::min);
        let certified = match o.method {
            OracleMethod::Pontryagin => o.residual <= ORACLE_CERTIFICATE && o.value <= best + 1e-10,
            OracleMethod::Grid => o.value <= best + GRID_SLACK,
        };
        OracleSummary {
            method: o.method.name().to_string(),
            value: o.value,
            residual: o.residual,
            iterations: o.iterations,
            initial_divergence: d0.unwrap_or(0.0),
            certified,
        }
    });

    let mut rates = Vec::new();
    let gaps: Option<Vec<f64>> = history.iter().map(|r| r.gap).collect();
    if let Some(gaps) = gaps {
        if let Ok(fit) = fit_rate("gap", &gaps) {
            rates.push(fit);
        }
    }
    let steps: Vec<f64> = history.iter().filter_map(|r| r.step_divergence).collect();
    if let Ok(fit) = fit_rate("step_divergence", &steps) {
        rates.push(fit);
    }

    Ok(ConvergenceReport {
        problem: ProblemSummary::of(problem),
        lambda,
        lambda_calibrated: calibrated,
        calibration_candidates: candidates,
        iterations: n,
        converged,
        stop_tolerance: config.tol,
        history,
        dissipation_violations: violations,
        max_cost_increase: if max_increase.is_finite() { max_increase } else { 0.0 },
        smoothness,
        convexity,
        final_cost: eval.cost,
        final_bmo: bmo_diagnostic(problem.tree(), &eval.adjoint)?,
        theoretical_rate: 1.0 - tau / lambda,
        oracle: oracle_summary,
        rates,
        final_policy: control_weights(&policy),
    })
}
