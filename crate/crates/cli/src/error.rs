use std::path::Path;

use sparsemono::kitti_io::IoError;
use sparsemono::simharness::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(io) => io.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<sparsemono::pbf::PbfError> for CliError {
    fn from(e: sparsemono::pbf::PbfError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<sparsemono::rapa::RapaError> for CliError {
    fn from(e: sparsemono::rapa::RapaError) -> Self {
        CliError::Validation(e.to_string())
    }
}
