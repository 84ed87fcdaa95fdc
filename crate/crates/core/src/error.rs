use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid discount: {0}")]
    InvalidDiscount(String),
    #[error("behavior probability is zero at state {state}, action {action} but target is not")]
    AbsoluteContinuity { state: usize, action: usize },
    #[error("behavior probability is zero at state {state}, action {action}")]
    ZeroBehaviorProbability { state: usize, action: usize },
    #[error("state {state} out of range (n = {n})")]
    StateOutOfRange { state: usize, n: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("no convergence after {iterations} iterations (last delta {delta:e})")]
    NotConverged { iterations: usize, delta: f64 },
    #[error("chain does not terminate: {0}")]
    NonTerminating(String),
    #[error("{learner} diverged at step {step}")]
    Divergence { learner: String, step: u64 },
    #[error("environment stepped after termination")]
    EnvTerminated,
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn tag_learner(self, name: &str) -> Error {
        match self {
            Error::Divergence { step, .. } => Error::Divergence { learner: name.to_string(), step },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
