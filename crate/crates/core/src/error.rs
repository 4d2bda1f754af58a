use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("step size h = {h} is not below the solvability threshold h* = {h_star}")]
    StepAboveThreshold { h: f64, h_star: f64 },

    #[error("invalid step size h = {0}")]
    InvalidStep(f64),

    #[error("implicit AVF solve did not converge after {iters} iterations (residual {residual:e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("singular implicit Jacobian (det = {0:e})")]
    Singular(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("mismatched step sizes for noise coarsening: coarse h = {coarse}, fine h = {fine}")]
    StepMismatch { coarse: f64, fine: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("observable `{name}` is not finite at sample {index}")]
    NonFiniteObservable { name: String, index: usize },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("invalid ensemble configuration: {0}")]
    InvalidEnsemble(String),
}

pub type Result<T> = std::result::Result<T, Error>;
