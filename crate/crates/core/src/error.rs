use thiserror::Error;

/// Failures raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("capacity exceeded: {what} needs {requested}, limit is {limit}")]
    Capacity {
        what: &'static str,
        requested: f64,
        limit: f64,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("protocol aborted at stage {stage}: {reason}")]
    ProtocolAbort { stage: usize, reason: String },

    #[error("linear program is {0}")]
    Lp(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
