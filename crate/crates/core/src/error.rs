use thiserror::Error;

/// Errors produced by model construction, filtering, learning and planning.
#[derive(Debug, Error)]
pub enum MobalError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The observation has zero probability under the model and belief.
    #[error("observation {observation} is impossible under action {action}")]
    ImpossibleObservation { action: usize, observation: usize },

    /// Every conjecture assigns zero likelihood to the observation.
    #[error("observation {observation} has zero likelihood under every conjecture")]
    DegenerateEvidence { observation: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MobalError> = std::result::Result<T, E>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(MobalError::Argument(msg.into()))
}
