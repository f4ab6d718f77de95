use std::fmt;
use std::path::Path;

use kdgan::checkpoint::CheckpointError;
use kdgan::config::ConfigError;
use kdgan::data::DataError;
use kdgan::distill::DistillError;
use kdgan::experiment::ExperimentError;

pub const CONFIG: u8 = 2;
pub const DIVERGENCE: u8 = 3;
pub const IO: u8 = 4;
pub const INCOMPATIBLE: u8 = 5;

/// An error message with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub status: u8,
    pub message: String,
}

impl Failure {
    pub fn new(status: u8, message: impl fmt::Display) -> Self {
        Self { status, message: message.to_string() }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::new(IO, format!("{}: {err}", path.display()))
    }

    /// Any problem with the teacher checkpoint a distillation run depends on.
    pub fn teacher_checkpoint(path: &Path, err: CheckpointError) -> Self {
        Self::new(INCOMPATIBLE, format!("teacher checkpoint {}: {err}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::new(CONFIG, e)
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let status = match e {
            DataError::ClassAbsent(_) | DataError::Invalid(_) => CONFIG,
            _ => IO,
        };
        Self::new(status, e)
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Self::new(IO, e)
    }
}

impl From<DistillError> for Failure {
    fn from(e: DistillError) -> Self {
        let status = match &e {
            DistillError::Divergence { recent, .. } => {
                for r in recent {
                    eprintln!("{}", r.csv_row());
                }
                DIVERGENCE
            }
            DistillError::LatentMismatch { .. } | DistillError::ChannelMismatch { .. } | DistillError::Model(_) => INCOMPATIBLE,
            DistillError::InconsistentFlags(_) | DistillError::InvalidConfig(_) => CONFIG,
            DistillError::Observer(_) => IO,
            DistillError::Loss(_) | DistillError::Eval(_) => INCOMPATIBLE,
        };
        Self::new(status, e)
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(e) => e.into(),
            ExperimentError::Data(e) => e.into(),
            ExperimentError::Distill(e) => e.into(),
        }
    }
}
