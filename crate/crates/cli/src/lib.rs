//! Pipeline commands behind the `horizon-gcn` binary: dataset generation,
//! training, rollout, evaluation and the horizon-set ablation.

use std::io;
use std::path::{Path, PathBuf};

pub mod ablation;
pub mod commands;
pub mod config;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] horizon_gcn::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use horizon_gcn::Error as E;
        match self {
            Self::Usage(_) | Self::Core(E::InvalidArgument(_)) => 1,
            Self::Core(E::Numerical(_)) => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
