use super::mirror::{initial_control, step_field, MirrorDescentConfig, DISSIPATION_TOLERANCE, EXPANSION_TOLERANCE};
use super::probes::{expansion, random_pairs};
use super::ControlProblem;
use crate::error::{Error, Result};

pub const CALIBRATION_ITERATIONS: usize = 10;
pub const CALIBRATION_CAP: f64 = 1_048_576.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub lambda: f64,
    /// Every candidate tried, the accepted one last.
    pub candidates: Vec<f64>,
    /// Largest remainder-to-divergence ratio over the random pairs.
    pub smoothness_ratio: f64,
}

/// Doubling search from `max(1, 2τ)`. A candidate is accepted when the
/// smoothness residual `λ D - remainder` is above `-1e-9` on the random
/// probe pairs and on every consecutive pair of a 10-iteration run from the
/// initial control, and that run never increases `J^τ` by more than 1e-10.
pub fn calibrate_lambda(problem: &ControlProblem, config: &MirrorDescentConfig) -> Result<Calibration> {
    let mut probes = Vec::with_capacity(config.probe_pairs);
    for (pi, other) in random_pairs(problem, config.probe_pairs, config.seed) {
        let eval = problem.evaluate(&pi)?;
        let cost = problem.cost(&other)?.j_tau;
        probes.push(expansion(problem, &pi, &eval, &other, cost)?);
    }
    let smoothness_ratio = probes
        .iter()
        .filter(|(_, d)| *d > 0.0)
        .map(|(r, d)| r / d)
        .fold(0.0, f64::max);

    let start = initial_control(problem, config);
    let start_eval = problem.evaluate(&start)?;
    let mut lambda = f64::max(1.0, 2.0 * problem.tau());
    let mut candidates = Vec::new();
    while lambda <= CALIBRATION_CAP {
        candidates.push(lambda);
        if probes.iter().all(|(r, d)| lambda * d - r >= -EXPANSION_TOLERANCE) && run_is_clean(problem, &start, &start_eval, lambda)? {
            return Ok(Calibration {
                lambda,
                candidates,
                smoothness_ratio,
            });
        }
        lambda *= 2.0;
    }
    Err(Error::CalibrationFailed { cap: CALIBRATION_CAP })
}

fn run_is_clean(
    problem: &ControlProblem,
    start: &crate::dynamics::ControlField,
    start_eval: &super::Evaluation,
    lambda: f64,
) -> Result<bool> {
    let mut policy = start.clone();
    let mut eval = start_eval.clone();
    for _ in 0..CALIBRATION_ITERATIONS {
        let next = step_field(problem, &policy, &eval.gradient, lambda)?;
        let next_eval = problem.evaluate(&next)?;
        if next_eval.cost.j_tau > eval.cost.j_tau + DISSIPATION_TOLERANCE {
            return Ok(false);
        }
        let (remainder, div) = expansion(problem, &policy, &eval, &next, next_eval.cost.j_tau)?;
        if lambda * div - remainder < -EXPANSION_TOLERANCE {
            return Ok(false);
        }
        policy = next;
        eval = next_eval;
    }
    Ok(true)
}
