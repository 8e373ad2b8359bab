use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point, parameter or index outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("mixture weights sum to {0}, expected 1")]
    WeightNormalization(f64),

    /// Every mixture component assigns zero density to an observation.
    #[error("observation {0} has zero density under every mixture component")]
    Degenerate(usize),

    #[error("design matrix is rank deficient: X'X is not positive definite")]
    RankDeficient,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("observation {0} has -inf log-likelihood in every retained draw")]
    InfiniteLogLik(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File { path: std::path::PathBuf, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
