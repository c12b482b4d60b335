//! Command-line experiments on analytic discs attached to CR graph manifolds.
//!
//! Each subcommand loads an [`spec::ExperimentSpec`] (a JSON file or one of
//! the bundled specs), runs one pipeline of `wedgedisc-core` and writes a
//! deterministic JSON report, optionally with CSV tables for plotting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod report;
pub mod spec;

use std::path::PathBuf;

use clap::Parser;

pub use commands::{Command, Context};
pub use error::{CliError, EXIT_NUMERICAL, EXIT_OK, EXIT_PROPERTY, EXIT_SPEC};
pub use report::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "wedgedisc", version, about = "Analytic discs, rank certificates and wedge extension experiments")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Spec file, or the name of a bundled spec (lewy, perturbed_lewy,
    /// product_quadric, degenerate_line).
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Circle grid size (a power of two).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Solver tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Report path; JSON goes to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Worker threads for grid-parallel stages.
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Runs one command and returns its report; property failures are reported
/// through [`Report::failure`].
pub fn run(command: Command, spec: Option<&str>, seed: Option<u64>, grid: Option<usize>, tol: Option<f64>) -> Result<Report, CliError> {
    let loaded = spec.map(spec::load).transpose()?;
    let ctx = Context::new(loaded, seed, grid, tol);
    commands::run(command, &ctx)
}

/// Full command-line behaviour; returns the process exit code.
pub fn execute(args: &Args) -> i32 {
    let outcome = (|| -> Result<Report, CliError> {
        if args.format == Format::Csv && args.out.is_none() {
            return Err(CliError::spec("output", "--format csv needs --out".into()));
        }
        if args.jobs == Some(0) {
            return Err(CliError::spec("jobs", "--jobs must be at least 1".into()));
        }
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(jobs) = args.jobs {
            pool = pool.num_threads(jobs);
        }
        let pool = pool
            .build()
            .map_err(|e| CliError::io("jobs", format!("cannot start worker pool: {e}")))?;
        pool.install(|| run(args.command, args.spec.as_deref(), args.seed, args.grid, args.tol))
    })();
    match outcome {
        Ok(report) => {
            match &args.out {
                Some(out) => {
                    if let Err(e) = report.write(out, args.format == Format::Csv) {
                        eprintln!("{}", e.to_json());
                        return e.exit_code;
                    }
                }
                None => println!("{}", report.to_json()),
            }
            match &report.failure {
                None => EXIT_OK,
                Some(message) => {
                    let e = CliError::property(args.command.name(), message.clone());
                    eprintln!("{}", e.to_json());
                    EXIT_PROPERTY
                }
            }
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            if let Some(out) = &args.out {
                let path = if args.format == Format::Csv { out.with_extension("json") } else { out.clone() };
                let _ = report::write_file(&path, e.to_json().as_bytes());
            }
            e.exit_code
        }
    }
}
