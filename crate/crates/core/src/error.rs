pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by all toolkit modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("compatibility violation: {0}")]
    Compatibility(String),

    #[error("solver did not converge: {0}")]
    Convergence(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
