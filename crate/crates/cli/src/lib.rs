//! Batch pipeline: graph generation, text generation through a model
//! gateway, evaluation against reference graphs, transferability statistics
//! and annotation consensus.

pub mod backends;
pub mod commands;
pub mod config;
pub mod graphs;
pub mod manifest;
pub mod store;
pub mod summary;

use std::io;
use std::path::{Path, PathBuf};

use causaltext_core::stats::StatsError;
use causaltext_llm::{BackendError, CacheError, GatewayError};
use thiserror::Error;

pub use config::Config;
pub use graphs::GraphRecord;
pub use manifest::RunManifest;
pub use store::{FailureRecord, SampleRecord, SampleStore};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("store {} already holds samples; pass --resume to continue it", .0.display())]
    StoreExists(PathBuf),
    #[error("no reference graph for sample {0:?}")]
    MissingReference(String),
    #[error("sample {id:?}: {message}")]
    Mismatch { id: String, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("{failed} of {total} samples failed; outputs are partial (see {})", report.display())]
    Incomplete { failed: usize, total: usize, report: PathBuf },
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, line: u64, message: impl Into<String>) -> Self {
        CliError::Parse { path: path.to_path_buf(), line, message: message.into() }
    }

    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidConfig(_) | CliError::StoreExists(_) => 2,
            CliError::Io { .. } | CliError::Cache(_) => 3,
            CliError::Parse { .. } => 4,
            CliError::MissingReference(_) | CliError::Mismatch { .. } => 5,
            CliError::Stats(_) => 6,
            CliError::Gateway(_) | CliError::Backend(_) => 7,
            CliError::Incomplete { .. } => 8,
        }
    }
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
