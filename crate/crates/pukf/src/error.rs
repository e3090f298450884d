use thiserror::Error;

/// Errors raised by the factorization kernels, the filters and the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not positive semi-definite (diagonal {value} at index {index})")]
    NotPositiveSemiDefinite { index: usize, value: f64 },
    #[error("negative eigenvalue {0} in a matrix that must be positive semi-definite")]
    NegativeEigenvalue(f64),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("measurement noise must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("update weight {value} at index {index} is outside [0, 1]")]
    WeightOutOfRange { index: usize, value: f64 },
    #[error("non-finite state after propagation")]
    NonFiniteState,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("point cloud is degenerate")]
    DegenerateCloud,
    #[error("no feature projects into the image")]
    NoVisibleFeatures,
    #[error("run count must be at least 1")]
    InvalidRunCount,
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
