use thiserror::Error;

/// Errors produced by the map-element engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("shape mismatch: expected {expected} points, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("cost matrix contains a non-finite entry at ({row}, {col})")]
    InvalidCost { row: usize, col: usize },

    #[error("{needed} target slots required but only {available} available")]
    CapacityExceeded { needed: usize, available: usize },

    #[error("empty point set")]
    EmptyGeometry,

    #[error("scene generation failed: {0}")]
    GenerationFailed(String),

    #[error("loss diverged at iteration {iteration}")]
    DivergenceDetected { iteration: usize },

    #[error("input mismatch: {0}")]
    InputMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
