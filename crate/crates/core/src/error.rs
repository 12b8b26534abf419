use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is singular (|det| = {0:e})")]
    Singular(f64),
    #[error("matrix has negative determinant, its orthogonal factor is not a rotation")]
    ImproperOrthogonal,
    #[error("matrix is not a rotation (deviation {0:e})")]
    NotRotation(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("density {rho} is within {tol:e} of the critical density {critical}")]
    NearCritical { rho: f64, critical: f64, tol: f64 },
    #[error("root finding failed: {0}")]
    RootNotFound(String),
    #[error("sampler did not accept a proposal after {0} attempts")]
    SamplerExhausted(u64),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors that come from bad input rather than from the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::NearCritical { .. }
        )
    }
}
