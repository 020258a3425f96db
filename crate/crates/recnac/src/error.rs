//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration file or field failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A conditioning event has zero probability under the model.
    #[error("infeasible history: {0}")]
    Infeasible(String),

    /// An exact computation would exceed its enumeration budget.
    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Process exit code for the CLI: invalid configs exit 2, runtime
    /// failures exit 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidConfig(_) => 2,
            _ => 1,
        }
    }
}
