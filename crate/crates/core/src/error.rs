use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid feature maps: {0}")]
    InvalidFeatures(String),

    #[error("invalid iterate: {0}")]
    InvalidIterate(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("stationary distribution is not unique (null space dimension {dim})")]
    NonUniqueStationary { dim: usize },

    #[error("cannot extract a policy from an all-zero vector")]
    AllZeroInput,

    #[error("no convergence after {iterations} iterations: {reason}")]
    NoConvergence { iterations: usize, reason: String },

    #[error("reference point has zero mass at coordinate {index} where the point has mass")]
    ZeroMassReference { index: usize },

    #[error("non-finite exponent in exponentiated-gradient update at coordinate {index} (step size too large?)")]
    NumericOverflow { index: usize },

    #[error("policy {policy:?} induces a non-ergodic chain (second eigenvalue modulus {slem})")]
    NotErgodic { policy: Vec<usize>, slem: f64 },

    #[error("feature construction failed: {0}")]
    ConstructionFailed(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
