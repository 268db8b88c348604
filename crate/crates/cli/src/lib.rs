//! Command-line front end: run-file ingestion, solver runs, simulation
//! presets, residual and metric reports.
//!
//! Exit codes: 0 success, 1 input error, 2 budget or convergence warning.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod io;
pub mod runfile;

#[derive(Debug, Parser)]
#[command(name = "contactdyn", version, about = "Contact-dynamics toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON object of contact model overrides (alpha, beta, gamma, d0, d1, v0, eps, normal_mode).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for frame-parallel work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover torques and contact coefficients from a run file.
    Solve {
        run: PathBuf,
        /// Run file with tau, coefficients and forces filled in.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Solver summary and residual report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Objective per iteration (CSV).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run a preset (rest, incline, pendulum, carry) or a scene file.
    Simulate {
        scene: String,
        /// Run file with the trajectory, forces and planted coefficients.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Incline angle, degrees.
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
        /// Energy ledger per frame (CSV).
        #[arg(long)]
        energy: Option<PathBuf>,
        /// Full simulation log (JSON).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Residual of the torques and coefficients stored in a run file.
    Residual {
        run: PathBuf,
        /// Residual report (JSON).
        #[arg(long)]
        output: PathBuf,
        /// Per-frame residual norms (CSV).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Add per-contact force magnitude columns to the CSV.
        #[arg(long)]
        per_point: bool,
    },
    /// Compare a predicted run against a reference run.
    Metrics {
        pred: PathBuf,
        gt: PathBuf,
        /// Key-value report.
        #[arg(long)]
        output: PathBuf,
        /// Header plus one row.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        collision_threshold: Option<f64>,
        #[arg(long)]
        contact_threshold: Option<f64>,
        #[arg(long)]
        foot_height: Option<f64>,
        #[arg(long)]
        scene_threshold: Option<f64>,
    },
    /// Compare the analytic objective gradient with finite differences.
    Gradcheck {
        run: PathBuf,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Outcome of a command that did not fail on input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Budget exhausted, gradient mismatch or energy ledger flags.
    Warning,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Warning => 2,
        }
    }
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code. Diagnostics go to stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(&cli) {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
