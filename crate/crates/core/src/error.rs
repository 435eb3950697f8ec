use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid type space: {0}")]
    InvalidSpace(String),

    #[error("value {value} is not a member of the type space")]
    NotInSpace { value: String },

    #[error("measures live on different spaces ({left} vs {right} atoms)")]
    SpaceMismatch { left: usize, right: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{rate} = {value} exceeds its declared bound {bound}")]
    BoundViolation {
        rate: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("model has zero total event rate")]
    ZeroRate,

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("mass leakage {leakage:.3e} exceeds bound {bound:.3e}; widen the grid")]
    MassLeakage { leakage: f64, bound: f64 },

    #[error("time {t} outside [0, {t_end}]")]
    TimeOutOfRange { t: f64, t_end: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("operation requires a finite type space")]
    Unsupported(&'static str),

    #[error("insufficient data: {0}")]
    Insufficient(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
