//! The `gaittrack` command-line pipeline: simulate or ingest recordings,
//! window them, train a network and score it.
//!
//! Each stage reads the artifacts of the one before it from disk and writes
//! its own into a separate directory together with a `manifest.txt`.

pub mod commands;
pub mod run_config;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{run, Command, Overrides};
pub use run_config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] gaittrack::Error),
}

impl CliError {
    /// 1 for usage and config errors, 3 when training diverged, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        use gaittrack::error::TrainError;
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(gaittrack::Error::Train(TrainError::Diverged { .. })) => 3,
            CliError::Data(_) => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Data(gaittrack::Error::Io {
            path: path.into(),
            source,
        })
    }
}

macro_rules! data_error {
    ($($ty:ident),+) => {
        $(impl From<gaittrack::error::$ty> for CliError {
            fn from(e: gaittrack::error::$ty) -> Self {
                CliError::Data(e.into())
            }
        })+
    };
}

data_error!(ImuError, PipelineError, ModelError, TrainError, TrajectoryError, SimError);
