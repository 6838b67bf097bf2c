use std::io;

use thiserror::Error;

use crate::transport::TransportError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate distribution: standard deviation is zero")]
    DegenerateDistribution,

    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("worker {rank} failed: {source}")]
    Worker {
        rank: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
