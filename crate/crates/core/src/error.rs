use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state index {index} out of range for a {count}-state model")]
    StateIndex { index: usize, count: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    /// Transition-probability rows drifted away from summing to one.
    #[error("transition probabilities not row-stochastic: max drift {max_drift:e}")]
    RowSumDrift { max_drift: f64 },

    #[error("degenerate conditioning: state {state} has survival {survival:e} at backward time {backward}")]
    DegenerateConditioning { state: usize, backward: f64, survival: f64 },

    #[error("root bracketing failed for target {target:e} on [{lower}, {upper}]: {reason}")]
    NumericalRoot { target: f64, lower: f64, upper: f64, reason: String },

    #[error("{operation} is not supported by the {model} model")]
    Unsupported { model: &'static str, operation: &'static str },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "rate grid [{lower}, {upper}] too narrow: state {state}, rate {rate}, time {time} \
         has a quadrature node at {node} (escape {escape:.3e} > tolerance {tolerance:.3e})"
    )]
    GridCoverage { state: usize, rate: f64, time: f64, node: f64, escape: f64, tolerance: f64, lower: f64, upper: f64 },

    #[error("rate {rate} lies outside the lattice [{lower}, {upper}]")]
    OutsideGrid { rate: f64, lower: f64, upper: f64 },

    #[error("time {time} is not covered by the surface (step {step}, horizon {horizon})")]
    OutsideHorizon { time: f64, step: f64, horizon: f64 },

    #[error("surface grids are incompatible: {0}")]
    GridMismatch(String),

    #[error("missing dependency: {0}")]
    MissingDependency(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
