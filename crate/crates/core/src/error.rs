use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value {value} at node {node:?}")]
    NonFinite { node: Vec<f64>, value: f64 },
    #[error("integral tail not resolved: {0}")]
    TailUnresolved(String),
    #[error("parameter regime violated: {0}")]
    Regime(String),
    #[error("geometry violation: {0}")]
    Geometry(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
