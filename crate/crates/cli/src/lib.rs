//! Command-line front end: JSON experiment files in, reports and plot-ready
//! CSV out.

pub mod compare;
pub mod config;
pub mod error;
pub mod output;
pub mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{build, load_config, parse_config, Experiment, ExperimentConfig};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "bmdp", version, about = "Bregman mirror descent on scenario trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write outputs here instead of `outputs.directory`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run mirror descent and write report.json, iterates.csv, rates.csv and probes.json.
    Solve { config: PathBuf },
    /// Theorem probes and the assumption audit only.
    Probe { config: PathBuf },
    /// Compare two report.json files.
    Compare { a: PathBuf, b: PathBuf },
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    match try_execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn try_execute(cli: &Cli) -> CliResult<i32> {
    let opts = run::RunOptions {
        out_dir: cli.out_dir.clone(),
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Solve { config } => {
            let exp = load_config(config)?;
            let outcome = run::solve(&exp, &opts)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if !opts.quiet {
                run::print_solve(&outcome);
            }
            for v in &outcome.violations {
                eprintln!("violation: {v}");
            }
            Ok(outcome.exit_code())
        }
        Command::Probe { config } => {
            let exp = load_config(config)?;
            let outcome = run::probe(&exp, &opts)?;
            for w in &outcome.document.audit.violations {
                eprintln!("warning: assumption audit: {w}");
            }
            if !opts.quiet {
                run::print_probe(&outcome, config);
            }
            for v in &outcome.document.violations {
                eprintln!("violation: {v}");
            }
            Ok(outcome.exit_code())
        }
        Command::Compare { a, b } => {
            let comparison = compare::compare_files(a, b)?;
            println!("{comparison}");
            Ok(run::EXIT_OK)
        }
    }
}

/// Sizes the global worker pool from `BMDP_THREADS` when it is set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("BMDP_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Range(format!("BMDP_THREADS must be a positive integer, got `{value}`")))?;
    // Fails only if the pool already exists, in which case it stays as is.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
