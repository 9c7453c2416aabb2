use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("action index {action} out of range for {num_actions} actions")]
    ActionOutOfRange { action: usize, num_actions: usize },

    #[error("mixture probability of the chosen action is {0}, must be positive (broken floor or missing uniform expert)")]
    NonPositivePropensity(f64),

    #[error("entry {index} is {value}, must be strictly positive")]
    NonPositiveEntry { index: usize, value: f64 },

    #[error("infeasible floor: {num_experts} experts with floor {eps_floor} sum above one")]
    InfeasibleFloor { num_experts: usize, eps_floor: f64 },

    #[error("weight vector leaves the floored simplex: {0}")]
    NotInFlooredSimplex(String),

    #[error("multiplicative update exponent {0} is not finite")]
    ExponentOutOfRange(f64),

    #[error("singular design: minimum eigenvalue {min_eigenvalue:.3e} below tolerance {tolerance:.3e}; use the ridge estimator instead")]
    SingularDesign { min_eigenvalue: f64, tolerance: f64 },

    #[error("noise scale estimate is zero; the standardized statistic is undefined")]
    ZeroNoiseScale,

    #[error("estimate has no noise scale attached")]
    MissingNoiseScale,

    #[error("penalty is zero so the minimizer may not be unique; compare vertices of the loss vector instead")]
    NonUniqueOptimum,

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
