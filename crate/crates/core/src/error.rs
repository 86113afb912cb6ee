use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged in {component}: {detail}")]
    Divergence { component: String, detail: String },

    #[error("environment fault: {0}")]
    EnvFault(String),

    #[error("empty buffer: {0}")]
    EmptyBuffer(String),

    #[error("insufficient data: have {have} transitions, need at least {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scenario too large: {0}")]
    ScenarioSize(String),

    #[error("rollout aborted: {0}")]
    RolloutAborted(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn divergence(component: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Divergence {
            component: component.into(),
            detail: detail.into(),
        }
    }

    /// Short machine-readable tag used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract_violation",
            Error::Divergence { .. } => "training_divergence",
            Error::EnvFault(_) => "environment_fault",
            Error::EmptyBuffer(_) => "empty_buffer",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::Config(_) => "configuration",
            Error::ScenarioSize(_) => "scenario_size",
            Error::RolloutAborted(_) => "rollout_aborted",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Checkpoint(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
