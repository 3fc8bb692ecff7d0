use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("grid saturated: no free cell found after {attempts} rejection attempts")]
    GridSaturated { attempts: usize },

    #[error("instance file {path}: {reason}")]
    InstanceParse { path: PathBuf, reason: String },

    #[error("instance file {path}: unsupported format version {found} (expected {expected})")]
    InstanceVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("cannot step a terminal episode")]
    TerminalStep,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("replay buffer holds {have} transitions, need {need}")]
    BufferTooSmall { have: usize, need: usize },

    #[error("instance exceeds oracle guards: {0}")]
    OracleGuard(String),

    #[error("environment check diverged:\n{0}")]
    EnvCheckDiverged(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("checkpoint does not match run config: {0}")]
    ResumeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
