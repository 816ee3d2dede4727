//! Persistence, configuration and benchmarking around `xfcsi-core`: binary
//! containers for datasets and checkpoints, the JSON run configuration, CSV
//! artifacts, and the benchmark harness behind the CLI.

pub mod bench;
pub mod ckpt;
pub mod config;
pub mod dataset;
pub mod manifest;
pub mod parallel;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: bad magic, expected {expected}")]
    BadMagic { path: String, expected: &'static str },
    #[error("{path}: truncated or corrupt ({detail})")]
    Corrupt { path: String, detail: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("core: {0}")]
    Core(xfcsi_core::Error),
}

impl From<xfcsi_core::Error> for FileError {
    fn from(e: xfcsi_core::Error) -> Self {
        FileError::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, FileError>;
