use thiserror::Error;

/// Errors raised by the library operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlexError {
    #[error("fleet must contain at least one device")]
    EmptyFleet,
    #[error("invalid device `{id}`: {reason}")]
    InvalidDevice { id: String, reason: String },
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("invalid window [{t0}, {t1})")]
    InvalidWindow { t0: f64, t1: f64 },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid request {0} W: requests must be finite and nonnegative")]
    InvalidRequest(f64),
    #[error("invalid cluster count {0}")]
    InvalidClusterCount(usize),
    #[error("invalid duration {0} s: must be positive")]
    InvalidDuration(f64),
    #[error("invalid gradient {0} W/s: must be positive")]
    InvalidGradient(f64),
    #[error("invalid step {0} s: must be positive")]
    InvalidStep(f64),
    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),
    #[error("oracle mismatch in case {case} (seed {seed}): {detail}")]
    OracleMismatch {
        seed: u64,
        case: usize,
        detail: String,
    },
}

pub type Result<T, E = FlexError> = std::result::Result<T, E>;
