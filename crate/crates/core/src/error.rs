use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("attitude quaternion is not unit norm (‖q‖ = {norm})")]
    InvalidAttitude { norm: f64 },

    #[error("invalid inertia matrix: {0}")]
    InvalidInertia(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("policy shape mismatch: {0}")]
    Shape(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("protocol order violation: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
