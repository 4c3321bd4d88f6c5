//! Side-by-side view of two runs on the same model and tree.
//!
//! For a final iterate `π_τ` the regularization bias is `τ ℋ(π_τ)`, the part
//! of `J^τ` that is not `J⁰`. Excess `J⁰` is measured against the smaller of
//! the two `J⁰` values.

use std::fmt;
use std::path::Path;

use bmdp_core::solver::ConvergenceReport;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::read_report;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub regularizer: String,
    pub tau: f64,
    pub lambda: f64,
    pub j0: f64,
    pub j_tau: f64,
    pub bias: f64,
    pub excess_j0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasOrdering {
    /// The run with the smaller `τ` has the smaller bias.
    Consistent,
    /// The runs share `τ`.
    EqualTau,
    Inverted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: RunSummary,
    pub b: RunSummary,
    /// `b - a`.
    pub delta_j0: f64,
    pub delta_j_tau: f64,
    pub delta_bias: f64,
    pub ordering: BiasOrdering,
}

impl Comparison {
    pub fn identical(&self) -> bool {
        self.delta_j0 == 0.0 && self.delta_j_tau == 0.0 && self.delta_bias == 0.0
    }
}

fn summarize(label: &str, r: &ConvergenceReport, best_j0: f64) -> RunSummary {
    RunSummary {
        label: label.to_string(),
        regularizer: r.problem.regularizer.clone(),
        tau: r.problem.tau,
        lambda: r.lambda,
        j0: r.final_cost.j0,
        j_tau: r.final_cost.j_tau,
        bias: r.problem.tau * r.final_cost.entropy,
        excess_j0: r.final_cost.j0 - best_j0,
    }
}

pub fn compare_reports(a: &ConvergenceReport, b: &ConvergenceReport, labels: [&str; 2]) -> CliResult<Comparison> {
    if !a.problem.compatible_with(&b.problem) {
        let (pa, pb) = (&a.problem, &b.problem);
        return Err(CliError::IncompatibleReports(format!(
            "{} ({} steps, d' = {}, {} actions) vs {} ({} steps, d' = {}, {} actions)",
            pa.model,
            pa.n_steps,
            pa.d_prime,
            pa.actions.len(),
            pb.model,
            pb.n_steps,
            pb.d_prime,
            pb.actions.len()
        )));
    }
    let best = a.final_cost.j0.min(b.final_cost.j0);
    let sa = summarize(labels[0], a, best);
    let sb = summarize(labels[1], b, best);
    let ordering = if sa.tau == sb.tau {
        BiasOrdering::EqualTau
    } else {
        let (small, large) = if sa.tau < sb.tau { (&sa, &sb) } else { (&sb, &sa) };
        if small.bias <= large.bias {
            BiasOrdering::Consistent
        } else {
            BiasOrdering::Inverted
        }
    };
    Ok(Comparison {
        delta_j0: sb.j0 - sa.j0,
        delta_j_tau: sb.j_tau - sa.j_tau,
        delta_bias: sb.bias - sa.bias,
        a: sa,
        b: sb,
        ordering,
    })
}

pub fn compare_files(a: &Path, b: &Path) -> CliResult<Comparison> {
    let ra = read_report(a)?;
    let rb = read_report(b)?;
    let la = a.display().to_string();
    let lb = b.display().to_string();
    compare_reports(&ra, &rb, [&la, &lb])
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in [&self.a, &self.b] {
            writeln!(f, "{}", s.label)?;
            writeln!(f, "  regularizer {}, tau = {}, lambda = {}", s.regularizer, s.tau, s.lambda)?;
            writeln!(f, "  J0 = {}", s.j0)?;
            writeln!(f, "  J^tau = {}", s.j_tau)?;
            writeln!(f, "  bias tau*H = {}", s.bias)?;
            writeln!(f, "  excess J0 = {}", s.excess_j0)?;
        }
        writeln!(f, "difference (second - first)")?;
        writeln!(f, "  J0: {}", self.delta_j0)?;
        writeln!(f, "  J^tau: {}", self.delta_j_tau)?;
        writeln!(f, "  bias: {}", self.delta_bias)?;
        let ordering = match self.ordering {
            BiasOrdering::Consistent => "smaller tau has the smaller bias",
            BiasOrdering::EqualTau => "equal tau",
            BiasOrdering::Inverted => "smaller tau has the LARGER bias",
        };
        write!(f, "bias ordering: {ordering}")
    }
}
