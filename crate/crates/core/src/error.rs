use thiserror::Error;

/// Errors raised by schedule construction, propagation and analysis.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QdError {
    #[error("gap closed: Gamma = omega = 0 at tau = {tau}")]
    GapClosed { tau: f64 },

    #[error("state is not normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("non-finite control value: {0}")]
    NonFinite(String),

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("step size underflow near tau = {tau} (step {step:e})")]
    StepUnderflow { tau: f64, step: f64 },

    #[error("trajectory does not belong to schedule: {0}")]
    ScheduleMismatch(String),

    #[error("target fidelity {target} not reached in T = [{lo}, {hi}]; best {best} at T = {best_at}")]
    TargetUnreached {
        target: f64,
        lo: f64,
        hi: f64,
        best: f64,
        best_at: f64,
    },

    #[error("no feasible coupling for T = {duration}: {reason}")]
    Infeasible { duration: f64, reason: String },

    #[error("at T = {duration}: {source}")]
    AtDuration {
        duration: f64,
        #[source]
        source: Box<QdError>,
    },
}

impl QdError {
    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        QdError::InvalidParameter { name, value, reason }
    }

    pub(crate) fn at_duration(self, duration: f64) -> Self {
        QdError::AtDuration {
            duration,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, QdError>;
