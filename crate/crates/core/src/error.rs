use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed record at index {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("domain proportion must lie in (0, 1], got {0}")]
    InvalidProportion(f64),
    #[error("reward group is empty")]
    EmptyGroup,
    #[error("reward {0} is not binary")]
    NonBinaryReward(f64),
    #[error("domain `{0}` is not present in the catalog")]
    UnknownDomain(String),
    #[error("log-probability is not finite")]
    NonFiniteLogProb,
    #[error("group size mismatch: {0}")]
    MismatchedGroupSizes(String),
    #[error("missing log-probabilities: {0}")]
    MissingLogProbs(String),
    #[error("prompt `{0}` is unknown to the policy")]
    UnknownPrompt(String),
    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("pool for domain `{domain}` holds {available} records, {requested} requested")]
    InsufficientPool {
        domain: String,
        requested: usize,
        available: usize,
    },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("paired differences have zero variance")]
    DegenerateVariance,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("config parse error at line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },
    #[error("no run report found at {0}")]
    MissingReport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for problems with the user's configuration rather than with a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::ConfigParse { .. }
                | Error::InvalidConfig(_)
                | Error::InvalidSpec(_)
                | Error::UnknownDomain(_)
                | Error::InsufficientPool { .. }
        )
    }
}
