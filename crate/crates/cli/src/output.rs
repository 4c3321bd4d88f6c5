//! Files written by `solve` and `probe`.
//!
//! CSV columns (header always present, empty cell for a missing value):
//!
//! - `iterates.csv`: `n, j_tau, gap, step_divergence, bound_value`
//! - `rates.csv`: `series, fitted_rate, intercept, r_squared, points,
//!   geometric, theoretical_rate`
//!
//! Floats are written in the shortest form that parses back to the same
//! value, in CSV and JSON alike.

use std::fs;
use std::path::{Path, PathBuf};

use bmdp_core::solver::ConvergenceReport;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const REPORT_FILE: &str = "report.json";
pub const ITERATES_FILE: &str = "iterates.csv";
pub const RATES_FILE: &str = "rates.csv";
pub const PROBES_FILE: &str = "probes.json";

pub const ITERATES_HEADER: [&str; 5] = ["n", "j_tau", "gap", "step_divergence", "bound_value"];
pub const RATES_HEADER: [&str; 7] = [
    "series",
    "fitted_rate",
    "intercept",
    "r_squared",
    "points",
    "geometric",
    "theoretical_rate",
];

fn write_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| write_error(dir, e))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| write_error(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| write_error(&path, e))?;
    Ok(path)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(header).map_err(|e| write_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| write_error(path, e))
}

pub fn write_iterates(dir: &Path, report: &ConvergenceReport) -> CliResult<PathBuf> {
    let path = dir.join(ITERATES_FILE);
    let rows = report
        .history
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.j_tau.to_string(),
                cell(r.gap),
                cell(r.step_divergence),
                cell(r.bound_value),
            ]
        })
        .collect();
    write_csv(&path, &ITERATES_HEADER, rows)?;
    Ok(path)
}

pub fn write_rates(dir: &Path, report: &ConvergenceReport) -> CliResult<PathBuf> {
    let path = dir.join(RATES_FILE);
    let rows = report
        .rates
        .iter()
        .map(|f| {
            vec![
                f.series.clone(),
                f.fitted_rate.to_string(),
                f.intercept.to_string(),
                f.r_squared.to_string(),
                f.points.to_string(),
                f.geometric.to_string(),
                report.theoretical_rate.to_string(),
            ]
        })
        .collect();
    write_csv(&path, &RATES_HEADER, rows)?;
    Ok(path)
}

pub fn read_report(path: &Path) -> CliResult<ConvergenceReport> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })
}
