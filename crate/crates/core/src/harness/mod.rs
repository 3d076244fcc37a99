//! Experiment configuration, multi-seed orchestration and export of
//! plot-ready CSV files.

mod config;
mod report;
mod run;
mod smoothing;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::evaluators::EvalError;
use crate::searchspace::SpaceError;
use crate::trainer::TrainerError;
use crate::transfer::TransferError;

pub use config::{ConfigError, EvaluatorKind, ExperimentConfig, Mode, ReportConfig, SmoothingConfig, SpaceConfig, TaskConfig};
pub use report::{
    curve_stats, event_rows, find_event_logs, read_events, report_compare, smoothed_rewards, write_compare,
    write_events, CompareRow, CurveStats, EventRow, NOT_REACHED,
};
pub use run::{build_tasks, run_config_file, run_experiment, BuiltTask, RunSummary};
pub use smoothing::{fit_window, smooth_curve, BadWindow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("no event log under {0}")]
    MissingLog(PathBuf),
    #[error("artifact {0} is empty")]
    EmptyArtifact(PathBuf),
    #[error(transparent)]
    BadWindow(#[from] BadWindow),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("a seed worker panicked")]
    Panicked,
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    /// 1 for configuration problems, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}
