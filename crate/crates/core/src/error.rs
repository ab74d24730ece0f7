use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid configuration graph: {0}")]
    InvalidConfigGraph(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A length scale (mollification width, ball radius, dyadic scale) fell
    /// below the nearest-neighbor spacing of the measure.
    #[error("{what} = {value} is below the resolution floor {floor} of the measure")]
    BelowResolution {
        what: &'static str,
        value: f64,
        floor: f64,
    },

    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("{what} requires {required} evaluations, budget is {budget}")]
    BudgetExceeded {
        what: &'static str,
        required: f64,
        budget: f64,
    },

    #[error("coincident points: kernels are only defined off the diagonal")]
    CoincidentPoints,

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("lower-bound assumption fails: {0}")]
    AssumptionFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NoConvergence { .. })
    }
}
