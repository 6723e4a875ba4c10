use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config does not name an experiment kind")]
    MissingKind,

    #[error("bad parameter: {0}")]
    Parameter(String),

    #[error(transparent)]
    Core(#[from] tiltlab_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("replay: {0}")]
    Replay(String),

    #[error("worker pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, CliError>;
