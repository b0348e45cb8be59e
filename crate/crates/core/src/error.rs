use thiserror::Error;

pub type Result<T> = std::result::Result<T, FdbError>;

#[derive(Debug, Error)]
pub enum FdbError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("trajectory error: {0}")]
    Trajectory(String),

    #[error("schedule error at t = {t}: {reason}")]
    Schedule { t: usize, reason: String },

    #[error("non-finite value at step {step}: {context}")]
    NonFinite { step: usize, context: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FdbError {
    pub fn config(msg: impl Into<String>) -> Self {
        FdbError::Config(msg.into())
    }

    /// True for errors caused by invalid user input rather than a failed run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            FdbError::Config(_)
                | FdbError::Dimension(_)
                | FdbError::ShapeMismatch { .. }
                | FdbError::Format(_)
                | FdbError::Json(_)
        )
    }
}

pub(crate) fn check_shape(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(FdbError::ShapeMismatch { expected, got });
    }
    Ok(())
}
