use thiserror::Error;

/// Errors raised by the measure, tree, dynamics and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid action space: {0}")]
    InvalidActionSpace(String),

    #[error("invalid regularizer: {0}")]
    InvalidRegularizer(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("relative entropy needs strictly positive weights, atom {index} is zero")]
    ZeroAtomInKL { index: usize },

    #[error("sinkhorn did not reach tolerance after {iterations} iterations (residual {residual:e})")]
    SinkhornDiverged { iterations: usize, residual: f64 },

    #[error("inner prox solve did not converge after {iterations} iterations (residual {residual:e})")]
    InnerSolveFailed { iterations: usize, residual: f64 },

    #[error("mirror step is not available for {0}")]
    UnsupportedProx(&'static str),

    #[error("invalid tree parameters: {0}")]
    InvalidTree(String),

    #[error("tree with {n_steps} steps and {d_prime} noise dimensions exceeds 2^20 leaves")]
    SizeExceeded { n_steps: usize, d_prime: usize },

    #[error("field level mismatch: expected level {expected}, found {found}")]
    LevelMismatch { expected: usize, found: usize },

    #[error("non-finite state at level {level}, node {node}")]
    NonFiniteState { level: usize, node: usize },

    #[error("implicit adjoint step is singular at level {level}, node {node}")]
    ImplicitStepDiverged { level: usize, node: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("lambda calibration failed below the cap {cap}")]
    CalibrationFailed { cap: f64 },

    #[error("oracle did not converge after {iterations} iterations (last change {change:e})")]
    OracleDidNotConverge { iterations: usize, change: f64 },

    #[error("grid oracle supports at most 3 decision nodes and 3 actions, got {decision_nodes} nodes and {actions} actions")]
    OracleTooLarge { decision_nodes: usize, actions: usize },

    #[error("rate fit needs at least {needed} positive gaps, got {found}")]
    InsufficientData { needed: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
