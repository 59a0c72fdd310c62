use thiserror::Error;

/// Errors raised by the estimation and testing pipeline.
///
/// The variants split into two families: [`Error::is_validation`] covers bad
/// input (shapes, parameter ranges, malformed files) and everything else is a
/// numerical failure detected at run time.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("malformed input at row {row}, column {column}: {reason}")]
    MalformedCell { row: usize, column: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("root not bracketed: {0}")]
    RootNotBracketed(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("degenerate contrast: Δ Σ Δᵀ = {0:e}")]
    DegenerateContrast(f64),

    #[error("simulation aborted: {failed} of {total} replications failed (first error: {first})")]
    TooManyFailures { failed: usize, total: usize, first: String },

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by the caller's input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::DimensionMismatch(_)
                | Error::InvalidDataset(_)
                | Error::MalformedCell { .. }
                | Error::InvalidConfig(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Toml(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
