use thiserror::Error;

/// Errors produced by the forecasting pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KoobaError {
    #[error("basis argument {0} lies outside [-1, 1]")]
    Domain(f64),

    #[error("coefficient vector is empty")]
    EmptyCoefficients,

    #[error(
        "polynomial order {order} exceeds the factorial precision limit of {limit} \
         (factorial values are only representable up to roughly 32!); \
         enable log-domain products to extend the limit to {log_limit}"
    )]
    OrderTooLarge { order: usize, limit: usize, log_limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("(I - dt/2 * N) is singular for dt = {dt}")]
    SingularBilinear { dt: f64 },

    #[error("discretized transition has spectral radius {radius} > 1 + 1e-6 (dt = {dt})")]
    Unstable { radius: f64, dt: f64 },

    #[error("degenerate coefficients: |a_n| = {value:e} is below {tolerance:e}")]
    DegenerateCoefficients { value: f64, tolerance: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite loss at epoch {epoch}, window {window} (feature {feature})")]
    NonFiniteLoss { epoch: usize, window: usize, feature: usize },

    #[error("integration diverged at step {step}")]
    Diverged { step: usize },

    #[error("I/O error: {0}")]
    Io(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("model format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, KoobaError>;

impl From<std::io::Error> for KoobaError {
    fn from(e: std::io::Error) -> Self {
        KoobaError::Io(e.to_string())
    }
}
