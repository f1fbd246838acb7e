use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("step called on a finished episode")]
    EpisodeDone,

    #[error("invalid maze: {0}")]
    Maze(String),

    #[error("replay buffer holds {available} records, {requested} requested")]
    InsufficientData { requested: usize, available: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what}: bad file format ({reason})")]
    Format { what: &'static str, reason: String },

    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),

    #[error("missing checkpoint for variant {variant}: {}", path.display())]
    MissingCheckpoint { variant: String, path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
