use thiserror::Error;

/// Error classes shared by every crate in the workspace.
///
/// `Shape` covers runtime extent disagreements, `Config` covers invalid
/// hyperparameters or module wiring, `Contract` covers API misuse (wrong
/// rank, non-scalar loss, tape misuse), and `Integrity` covers corrupt
/// serialized artifacts.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
