//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("instance too large: {0}")]
    InstanceSize(String),

    #[error("no feasible solution: {0}")]
    Infeasible(String),

    #[error("internal consistency violation: {0}")]
    Internal(String),

    #[error("aggregation failed: {0}")]
    Aggregation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
