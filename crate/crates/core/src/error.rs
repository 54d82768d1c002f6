use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid conditional table: {0}")]
    InvalidTable(String),

    #[error("singular linear system while solving for {0}")]
    Singular(&'static str),

    #[error("state space too large: {states} states exceeds cap {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("support mismatch at (s={state}, a={action}): {detail}")]
    SupportMismatch {
        state: usize,
        action: usize,
        detail: String,
    },

    #[error("oracle disagreement: {0}")]
    OracleDisagreement(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown environment id `{0}`")]
    UnknownEnvironment(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
