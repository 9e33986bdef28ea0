use thiserror::Error;

/// Errors raised across the solver, reconstruction and estimator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("non-finite value {value} while evaluating {what}")]
    NonFinite { what: String, value: f64 },

    #[error("point {coord} lies on a face along axis {axis}; request a trace side")]
    AmbiguousTrace { axis: usize, coord: f64 },

    #[error("derivative of order {order} is undefined on the breakpoint {coord} (axis {axis})")]
    UndefinedDerivative { axis: usize, coord: f64, order: usize },

    #[error("inadmissible state in cell {cell}, component {component}: value {value}")]
    InadmissibleState {
        cell: usize,
        component: usize,
        value: f64,
    },

    #[error("linear solver failed after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("degenerate time stencil: {0}")]
    DegenerateStencil(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
