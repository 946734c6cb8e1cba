//! Experiment plumbing: configuration, run execution, persistence of run logs
//! and histories, and summaries across folds and repeats.

mod config;
mod runlog;
mod runner;
mod summary;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{DatasetSource, ExperimentConfig};
pub use runlog::{
    read_history, read_run_log, write_history, write_run_log, LogRecord, ModelWeights, RunHeader, RunLog, Timing,
};
pub use runner::{
    load_splits, repeat_seed, run_experiment, run_job, run_sweep, unlearn_from_history, ExperimentOutput, Split,
    SweepGrid,
};
pub use summary::{summarize, CurveRow, FinalRow, Summary};

use crate::adversary::AdversaryError;
use crate::clicksim::ClickError;
use crate::dataset::DatasetError;
use crate::federation::FederationError;
use crate::unlearning::UnlearnError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("loading data: {0}")]
    Data(#[from] DatasetError),
    #[error("click model: {0}")]
    ClickModel(#[from] ClickError),
    #[error("scenario: {0}")]
    Scenario(#[from] AdversaryError),
    #[error("training (fold {fold}, repeat {repeat}): {source}")]
    Training {
        fold: usize,
        repeat: usize,
        #[source]
        source: FederationError,
    },
    #[error("unlearning (fold {fold}, repeat {repeat}): {source}")]
    Unlearning {
        fold: usize,
        repeat: usize,
        #[source]
        source: UnlearnError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {reason}")]
    Format { path: PathBuf, line: usize, reason: String },
    #[error("summary: {0}")]
    Summary(String),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
