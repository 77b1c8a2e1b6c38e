use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("map is not injective: {0}")]
    Injectivity(String),

    #[error("invalid PLQ representation: {0}")]
    InvalidRep(String),

    #[error("Cholesky factorization failed at pivot {pivot} (value {value:.3e})")]
    Factorization { pivot: usize, value: f64 },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("structural failure: {0}")]
    Structure(String),

    #[error("fit metric undefined: true impulse response has zero norm")]
    UndefinedMetric,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
