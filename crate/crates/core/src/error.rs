use thiserror::Error;

/// Errors raised by the model, flows and experiment layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DcrmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("drift field violates the norm bound: |beta|_eta = {norm} >= 1")]
    ConstraintViolation { norm: f64 },

    #[error("projection onto the equilibrium surface undefined: position block of factor {factor} is zero")]
    ProjectionUndefined { factor: usize },

    #[error("non-finite value produced by {context}")]
    NumericOverflow { context: &'static str },

    #[error("internal time {t} is beyond the schedule horizon {horizon}")]
    ScheduleExhausted { t: f64, horizon: f64 },

    #[error("lipschitz estimation failed: every sampled pair was degenerate")]
    EstimationFailed,

    #[error("fit degenerate: only {measurable} measurable grid points (need at least 3)")]
    FitDegenerate { measurable: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, DcrmError>;
