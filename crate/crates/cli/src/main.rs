//! `regdiag`: regularity diagnostics for parametric lower-level problems.
//!
//! Exit codes: 0 when every verdict holds, 2 when a regularity failure was
//! found, 1 on errors (including usage errors).

mod commands;
mod report;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "regdiag", version, about = "Regularity diagnostics for parametric lower-level problems")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, serde::Serialize)]
pub struct GlobalOpts {
    /// Directory for JSON/CSV artifacts and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance override `name=value` (repeatable), e.g. `reg_tol=1e-5`.
    #[arg(long = "tol", global = true, value_name = "NAME=VALUE")]
    pub tol: Vec<String>,
    /// Rendering of the result on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand, Clone, serde::Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum Command {
    /// Regularity report for every KKT point at x.
    Check {
        /// Corpus id or problem file.
        problem: String,
        #[arg(long, allow_hyphen_values = true)]
        x: Point,
    },
    /// Trace a KKT branch along the segment from --from to --to.
    Trace {
        problem: String,
        #[arg(long, allow_hyphen_values = true)]
        from: Point,
        #[arg(long, allow_hyphen_values = true)]
        to: Point,
        #[command(flatten)]
        start: StartSpec,
        /// Trace from a point that is not a strict local minimizer.
        #[arg(long)]
        allow_non_minimizer: bool,
    },
    /// Stratification signatures at each --x and the rigidity screen across them.
    Strata {
        problem: String,
        /// Parameter sample (repeatable).
        #[arg(long = "x", allow_hyphen_values = true, required = true)]
        xs: Vec<Point>,
        #[arg(long, default_value_t = regdiag::strata::DEFAULT_GRID_RES)]
        grid: usize,
    },
    /// Failure-set estimate and seeded perturbation experiment.
    Perturb {
        problem: String,
        #[arg(long, value_parser = parse_condition)]
        condition: regdiag::perturb::Condition,
        #[arg(long, default_value_t = regdiag::perturb::DEFAULT_NU)]
        nu: f64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = regdiag::strata::DEFAULT_GRID_RES)]
        grid: usize,
    },
    /// Sensitivities of every KKT point at --x, or the conditioning profile of a traced branch.
    Sens {
        problem: String,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<Point>,
        #[arg(long, allow_hyphen_values = true, requires = "to", conflicts_with = "x")]
        from: Option<Point>,
        #[arg(long, allow_hyphen_values = true, requires = "from")]
        to: Option<Point>,
        /// Also compare the branch tangent with central differences of this step.
        #[arg(long)]
        fd_step: Option<f64>,
    },
    /// Quadratic growth estimate at every strict local minimizer at --x.
    Growth {
        problem: String,
        #[arg(long, allow_hyphen_values = true)]
        x: Point,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 4000)]
        samples: usize,
    },
    /// List the built-in problems, or print one as a problem file.
    Corpus {
        /// Corpus id to print as a problem file.
        id: Option<String>,
    },
    /// Run the reproduction criteria and print a pass/fail table.
    Repro {
        /// Criterion ids to run (comma separated); all when omitted.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

#[derive(Debug, Args, Clone, serde::Serialize)]
pub struct StartSpec {
    /// `global-min`, or `point` together with --start-y and --start-set.
    #[arg(long, default_value = "global-min")]
    pub start: String,
    #[arg(long, allow_hyphen_values = true)]
    pub start_y: Option<Point>,
    /// Constraints held at equality, 1-based and comma separated (may be empty).
    #[arg(long)]
    pub start_set: Option<String>,
}

/// A comma-separated vector such as `0.5` or `1,-2`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl std::str::FromStr for Point {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Point)
    }
}

impl std::ops::Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn parse_condition(s: &str) -> Result<regdiag::perturb::Condition, String> {
    s.parse().map_err(|e: regdiag::DiagError| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let display_only = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if display_only { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    if let Ok(v) = std::env::var("REGDIAG_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: REGDIAG_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(1);
            }
        }
    }
    match commands::run(&cli) {
        Ok(commands::Outcome::Clean) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Finding) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
