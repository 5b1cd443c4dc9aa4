use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid start pose: penetration {depth:.6} m exceeds {limit:.6} m")]
    InvalidStart { depth: f64, limit: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("replay buffer holds {have} transitions, {need} requested")]
    NotReady { have: usize, need: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("episode is not running")]
    EpisodeOver,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape_err(expected: impl core::fmt::Display, got: impl core::fmt::Display) -> Error {
    use alloc::string::ToString;
    Error::Shape {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
