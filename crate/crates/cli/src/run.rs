use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bmdp_core::dynamics::{assumption_audit, AuditReport, AuditSamples};
use bmdp_core::solver::{
    calibrate_lambda, oracle_optimal_control, run_mirror_descent, theorem_probes, ConvergenceReport,
    LambdaChoice, OracleSolution, ProbeReport, ResidualSummary,
};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, Format};
use crate::error::CliResult;
use crate::output;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 2;

/// Sampled points for the assumption audit.
pub const AUDIT_SAMPLES: usize = 32;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces `outputs.directory`.
    pub out_dir: Option<PathBuf>,
    pub quiet: bool,
}

/// Checks recorded along the mirror-descent run itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunChecks {
    pub dissipation_violations: usize,
    pub max_cost_increase: f64,
    pub smoothness: ResidualSummary,
    pub convexity: ResidualSummary,
}

/// Contents of `probes.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDocument {
    pub theorems: ProbeReport,
    pub audit: AuditReport,
    pub run: Option<RunChecks>,
    /// One line per failed check; empty when everything held.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub report: ConvergenceReport,
    pub probes: Option<ProbeDocument>,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
    pub elapsed: Duration,
}

impl SolveOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.violations.is_empty() {
            EXIT_OK
        } else {
            EXIT_VIOLATION
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub document: ProbeDocument,
    pub files: Vec<PathBuf>,
}

impl ProbeOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.document.violations.is_empty() {
            EXIT_OK
        } else {
            EXIT_VIOLATION
        }
    }
}

fn output_dir(exp: &Experiment, opts: &RunOptions) -> PathBuf {
    opts.out_dir
        .clone()
        .or_else(|| exp.config.outputs.directory.clone())
        .unwrap_or_else(|| PathBuf::from("bmdp-output"))
}

fn summary_violations(what: &str, s: &ResidualSummary, out: &mut Vec<String>) {
    if s.violations > 0 {
        out.push(format!(
            "{what}: {} of {} residuals below -{:e} (worst {})",
            s.violations,
            s.count,
            s.tolerance,
            s.min_residual.map_or("n/a".to_string(), |m| m.to_string()),
        ));
    }
}

fn probe_violations(theorems: &ProbeReport) -> Vec<String> {
    let mut v = Vec::new();
    summary_violations("relative convexity", &theorems.convexity, &mut v);
    summary_violations("relative smoothness", &theorems.smoothness, &mut v);
    summary_violations("three-point inequality", &theorems.three_point, &mut v);
    v
}

fn run_violations(report: &ConvergenceReport) -> Vec<String> {
    let mut v = Vec::new();
    if report.dissipation_violations > 0 {
        v.push(format!(
            "energy dissipation: cost rose on {} iterations (largest increase {})",
            report.dissipation_violations, report.max_cost_increase
        ));
    }
    summary_violations("relative smoothness along the run", &report.smoothness, &mut v);
    summary_violations("relative convexity along the run", &report.convexity, &mut v);
    v
}

fn probe_document(exp: &Experiment, lambda: f64) -> CliResult<ProbeDocument> {
    let problem = &exp.problem;
    let theorems = theorem_probes(problem, lambda, exp.config.solver.probe_pairs, exp.config.seed)?;
    let samples = AuditSamples::random(
        problem.model(),
        problem.reference(),
        problem.tree().horizon(),
        AUDIT_SAMPLES,
        exp.config.seed,
    )?;
    let audit = assumption_audit(problem.model(), problem.regularizer(), &samples)?;
    let violations = probe_violations(&theorems);
    Ok(ProbeDocument {
        theorems,
        audit,
        run: None,
        violations,
    })
}

fn oracle(exp: &Experiment, warnings: &mut Vec<String>) -> Option<OracleSolution> {
    let cfg = exp.oracle.as_ref()?;
    match oracle_optimal_control(&exp.problem, cfg) {
        Ok(sol) => Some(sol),
        Err(e) => {
            warnings.push(format!("oracle unavailable, gaps not reported: {e}"));
            None
        }
    }
}

fn audit_warnings(audit: &AuditReport, warnings: &mut Vec<String>) {
    for v in &audit.violations {
        warnings.push(format!("assumption audit: {v}"));
    }
}

/// Runs mirror descent, the probes and writes every requested file.
pub fn solve(exp: &Experiment, opts: &RunOptions) -> CliResult<SolveOutcome> {
    let start = Instant::now();
    let mut warnings = Vec::new();
    let solution = oracle(exp, &mut warnings);
    let report = run_mirror_descent(&exp.problem, &exp.run, solution.as_ref())?;

    let mut violations = run_violations(&report);
    let outputs = &exp.config.outputs;
    let probes = if outputs.emit_probe_report {
        let mut doc = probe_document(exp, report.lambda)?;
        audit_warnings(&doc.audit, &mut warnings);
        doc.run = Some(RunChecks {
            dissipation_violations: report.dissipation_violations,
            max_cost_increase: report.max_cost_increase,
            smoothness: report.smoothness.clone(),
            convexity: report.convexity.clone(),
        });
        doc.violations.extend(violations.iter().cloned());
        violations = doc.violations.clone();
        Some(doc)
    } else {
        None
    };
    let elapsed = start.elapsed();

    let dir = output_dir(exp, opts);
    output::ensure_dir(&dir)?;
    let mut files = Vec::new();
    if outputs.formats.contains(&Format::Json) {
        files.push(output::write_json(&dir, output::REPORT_FILE, &report)?);
        if let Some(doc) = &probes {
            files.push(output::write_json(&dir, output::PROBES_FILE, doc)?);
        }
    }
    if outputs.formats.contains(&Format::Csv) {
        files.push(output::write_iterates(&dir, &report)?);
        files.push(output::write_rates(&dir, &report)?);
    }
    Ok(SolveOutcome {
        report,
        probes,
        violations,
        warnings,
        files,
        elapsed,
    })
}

/// Theorem probes and the assumption audit without a full run. `λ` is
/// calibrated first when the configuration asks for `auto`.
pub fn probe(exp: &Experiment, opts: &RunOptions) -> CliResult<ProbeOutcome> {
    let lambda = match exp.run.lambda {
        LambdaChoice::Fixed(l) => l,
        LambdaChoice::Auto => calibrate_lambda(&exp.problem, &exp.run)?.lambda,
    };
    let document = probe_document(exp, lambda)?;
    let dir = output_dir(exp, opts);
    output::ensure_dir(&dir)?;
    let files = vec![output::write_json(&dir, output::PROBES_FILE, &document)?];
    Ok(ProbeOutcome { document, files })
}

pub fn describe_files(files: &[PathBuf]) -> String {
    files
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn print_solve(outcome: &SolveOutcome) {
    let r = &outcome.report;
    println!(
        "{}: λ = {}{}, {} iterations, converged = {}",
        r.problem.model,
        r.lambda,
        if r.lambda_calibrated { " (calibrated)" } else { "" },
        r.iterations,
        r.converged
    );
    println!(
        "final J0 = {}, H = {}, J^tau = {}",
        r.final_cost.j0, r.final_cost.entropy, r.final_cost.j_tau
    );
    if let Some(o) = &r.oracle {
        println!(
            "oracle ({}): value = {}, residual = {:e}, certified = {}",
            o.method, o.value, o.residual, o.certified
        );
    }
    for fit in &r.rates {
        println!(
            "rate[{}] = {} (R² = {}, theoretical {})",
            fit.series, fit.fitted_rate, fit.r_squared, r.theoretical_rate
        );
    }
    println!("wall clock: {:.3} s", outcome.elapsed.as_secs_f64());
    println!("wrote {}", describe_files(&outcome.files));
}

pub fn print_probe(outcome: &ProbeOutcome, path: &Path) {
    let t = &outcome.document.theorems;
    println!(
        "{}: {} pairs at λ = {}, τ = {}; {} violations",
        path.display(),
        t.pairs,
        t.lambda,
        t.tau,
        t.violations()
    );
    println!("empirical smoothness ratio: {}", t.smoothness_ratio);
    println!("wrote {}", describe_files(&outcome.files));
}
