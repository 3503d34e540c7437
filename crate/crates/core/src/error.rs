//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, sampling, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("log-volatility overflow: |omega| = {0} exceeds 300")]
    VolatilityOverflow(f64),

    #[error("particle weights underflowed to zero at t = {0}")]
    WeightUnderflow(usize),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("series {series} at {date}: {message}")]
    SeriesValue {
        series: String,
        date: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("chain store error: {0}")]
    Store(String),

    #[error("sampler aborted at iteration {iteration} in {component}: {source}")]
    SamplerAbort {
        iteration: usize,
        component: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
