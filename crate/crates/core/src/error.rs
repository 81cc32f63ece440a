use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("index {k} outside admissible range [{lo}, {hi}]")]
    OutOfRange { k: usize, lo: usize, hi: usize },

    #[error("score covariance is rank deficient (eigenvalues {min_eig:e}, {max_eig:e})")]
    RankDeficient { min_eig: f64, max_eig: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("regime condition violated: {0}")]
    Regime(String),

    #[error("monitor already stopped at k = {0}")]
    Stopped(usize),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VolError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(VolError::InvalidParameter(msg.into()))
}
