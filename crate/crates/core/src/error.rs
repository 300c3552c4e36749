use thiserror::Error;

#[derive(Debug, Error)]
pub enum KurError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("magnetization norm {norm} deviates from 1 (tolerance {tol})")]
    NotNormalized { norm: f64, tol: f64 },

    #[error("time {time} is not a grid node")]
    OffGrid { time: f64 },

    #[error("jump probability {p1:.4} per step at t = {time} exceeds 0.05; reduce dt")]
    StepTooCoarse { p1: f64, time: f64 },

    #[error("positivity violated at t = {time}: minimum eigenvalue {min_eigenvalue:e}")]
    Positivity { time: f64, min_eigenvalue: f64 },

    #[error("trace drifted to {trace} at t = {time}")]
    TraceDrift { time: f64, trace: f64 },

    #[error("negative variance {radicand:e} for {what} at t = {time}")]
    NegativeVariance {
        what: &'static str,
        time: f64,
        radicand: f64,
    },

    #[error("system too large for exact evolution: N = {n} exceeds limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl KurError {
    /// Errors caused by the numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            KurError::StepTooCoarse { .. }
                | KurError::Positivity { .. }
                | KurError::TraceDrift { .. }
                | KurError::NegativeVariance { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, KurError>;
