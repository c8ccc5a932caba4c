//! Problem-file front end for `iqcloc`: reads a JSON problem, runs one command,
//! and emits a JSON report that `validate` can replay on its own.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod commands;
pub mod problem;
pub mod report;

pub use problem::{Mode, ProblemFile};
pub use report::{Report, Status};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },

    #[error("{0}")]
    Io(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: iqcloc::Error,
    },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub(crate) fn solver(context: impl Into<String>) -> impl FnOnce(iqcloc::Error) -> CliError {
        let context = context.into();
        move |source| match source {
            iqcloc::Error::DimensionMismatch(msg) => CliError::Dimension(format!("{context}: {msg}")),
            source => CliError::Solver { context, source },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Lowest certified level of each subsystem against its local objective.
    Analyze,
    /// Controller synthesis for each subsystem against its local objective.
    Synthesize,
    /// Whether the local objectives imply the global one.
    Admissible,
    /// Closest localization of the global objective, then local certification.
    Localize,
    /// Localization over capacity-bounded groups of subsystems.
    Group,
    /// Distributed localization and certification by ADMM.
    Admm,
    /// Replay every certificate of a report.
    Validate,
}

/// Overrides for the `options` section of a problem file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    /// Bisection tolerance on gamma.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_lo: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_hi: Option<f64>,
    /// Iteration cap for ADMM and grouping.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Seed of the random validation signals.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Grid size used when the multiplier is not monotone in gamma.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
}

pub(crate) const DEFAULT_TOL: f64 = 1e-4;
pub(crate) const DEFAULT_SEED: u64 = 0;

/// Flags merged over file options and defaults.
#[derive(Debug, Clone)]
pub(crate) struct Settings {
    pub tol: f64,
    pub gamma_lo: f64,
    /// `None` lets each unit pick its own bracket.
    pub gamma_hi: Option<f64>,
    pub max_iter: Option<usize>,
    pub grid: usize,
    pub mode: Mode,
}

impl Settings {
    pub fn merge(flags: &Flags, file: &problem::Options) -> Result<Self, CliError> {
        let s = Self {
            tol: flags.tol.or(file.tol).unwrap_or(DEFAULT_TOL),
            gamma_lo: flags.gamma_lo.or(file.gamma_lo).unwrap_or(0.0),
            gamma_hi: flags.gamma_hi.or(file.gamma_hi),
            max_iter: flags.max_iter.or(file.max_iter),
            grid: flags.grid.or(file.grid).unwrap_or(iqcloc::synthesis::MONOTONE_GRID),
            mode: flags.mode.or(file.mode).unwrap_or(Mode::Blockdiag),
        };
        if !(s.tol > 0.0) || !(s.gamma_lo >= 0.0) {
            return Err(CliError::Usage("tol must be positive and gamma_lo nonnegative".into()));
        }
        if let Some(hi) = s.gamma_hi {
            if !(hi > s.gamma_lo) {
                return Err(CliError::Usage(format!("gamma_hi = {hi} must exceed gamma_lo = {}", s.gamma_lo)));
            }
        }
        if s.grid < 2 {
            return Err(CliError::Usage("grid needs at least 2 points".into()));
        }
        Ok(s)
    }
}

/// Runs `command` on the file at `path`: a problem file, or a report for `validate`.
pub fn run(command: Command, path: &Path, flags: &Flags) -> Result<Report, CliError> {
    if command == Command::Validate {
        let report: Report = problem::read_file(path)?;
        return commands::validate(&report, flags);
    }
    let file: ProblemFile = problem::read_file(path)?;
    commands::run_problem(command, &file, flags)
}
