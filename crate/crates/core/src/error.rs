use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("unstable model: spectral radius {0:.6} is not below 1")]
    Unstable(f64),

    #[error("unstable drift: eigenvalue real part {0:.6} is not negative")]
    UnstableDrift(f64),

    #[error("(A, C) is not observable: observability rank {rank} < {dim}")]
    NotObservable { rank: usize, dim: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample")]
    EmptySample,

    #[error("buffer holds {len} of {capacity} entries")]
    UnderfullBuffer { len: usize, capacity: usize },

    #[error("sample size mismatch: declared {declared}, got {got}")]
    SizeMismatch { declared: usize, got: usize },

    #[error("invalid CDF: {0}")]
    InvalidCdf(String),

    #[error("Riccati iteration did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("rank-deficient regressor matrix")]
    RankDeficient,

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than numerics at runtime.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidParameter(_)
                | Error::DimensionMismatch { .. }
                | Error::NotPositiveDefinite(_)
                | Error::Unstable(_)
                | Error::UnstableDrift(_)
                | Error::NotObservable { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
