use thiserror::Error;

/// Errors surfaced by the simulation, learning and perception stacks.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The rigid-body integration could not proceed (e.g. an ill-conditioned inertia matrix).
    #[error("dynamics failure: {0}")]
    Dynamics(String),
    /// A non-finite value appeared in a numerical pipeline.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A configuration file or value could not be interpreted.
    #[error("config error: {0}")]
    Config(String),
    /// A file did not match its documented binary or text layout.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
