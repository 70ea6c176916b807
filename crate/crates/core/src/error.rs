use thiserror::Error;

/// Errors raised by the geometric and stochastic routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate metric at {point:?}: {reason}")]
    DegenerateMetric { point: Vec<f64>, reason: String },

    #[error("point {point:?} lies outside the chart domain")]
    ChartBoundary { point: Vec<f64> },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("insufficient sample: {usable} usable paths, {required} required")]
    InsufficientSample { usable: usize, required: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
