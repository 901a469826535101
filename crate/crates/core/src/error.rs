use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("boundary curves out of order at x = {x}: gamma_r = {right} > gamma_l = {left}")]
    CurveOrdering { x: f64, left: f64, right: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operator used before initialization")]
    Uninitialized,

    #[error("model output is unbounded: {0}")]
    UnboundedRange(String),

    #[error("numerical divergence at step {step}: u = {value}")]
    Divergence { step: u64, value: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("trace is not yet periodic: residual {residual:e} exceeds {tolerance:e}")]
    NotSteady { residual: f64, tolerance: f64 },

    #[error("rate estimation failed: {0}")]
    Estimation(String),

    #[error("config error: {0}")]
    Config(String),
}
