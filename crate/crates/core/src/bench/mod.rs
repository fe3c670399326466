//! Benchmark harness: BIRD-style datasets, knowledge-base seeding,
//! evaluation runs and execution-accuracy reports.

mod dataset;
mod report;
mod run;
pub mod runlog;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use dataset::{load_items, select_subset};
pub use report::{Bucket, Counters, EvalReport, ItemVerdict};
pub use run::{
    branch_dir, build_branches, build_provider, evaluate, gold_outcome, load_branches,
    persist_branches, seed, EvalOptions, InitStrategy, ProviderConfig, RunConfig, SeedSummary,
};
pub use runlog::{read_log, report_from_log, CompletedItem, RunLog};

use crate::llm::LlmError;
use crate::notebook::NotebookError;
use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("dataset record {}: {reason}", index.map_or("-".to_string(), |i| i.to_string()))]
    Dataset { index: Option<usize>, reason: String },
    #[error("question {question_id}: database {db_id} not found at {path}")]
    UnknownDatabase {
        question_id: String,
        db_id: String,
        path: PathBuf,
    },
    #[error("{path}:{line}: bad run-log record: {reason}")]
    Log {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("run log does not match the dataset: {0}")]
    ResumeMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Notebook(#[from] NotebookError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl BenchError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
