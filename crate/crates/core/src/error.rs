use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("unsupported kernel algebra: {0}")]
    UnsupportedKernel(String),

    #[error("kernel expression parse error at byte {pos}: {msg}")]
    KernelParse { pos: usize, msg: String },

    #[error("stationary covariance solve failed for {block}: {reason}")]
    Lyapunov { block: String, reason: String },

    #[error("invalid time step {0} (must be non-negative)")]
    NegativeTimeStep(f64),

    #[error("process noise covariance has eigenvalue {eigenvalue:e} below tolerance for dt = {dt}")]
    IndefiniteProcessNoise { dt: f64, eigenvalue: f64 },

    #[error("invalid likelihood: {0}")]
    InvalidLikelihood(String),

    #[error("observation {y} outside the support of the {likelihood} likelihood")]
    Domain { likelihood: &'static str, y: f64 },

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("quadrature order {0} out of range [1, 100]")]
    QuadratureOrder(usize),

    #[error("non-finite quadrature result (overflow) at m = {m}, v = {v}")]
    QuadratureOverflow { m: f64, v: f64 },

    #[error("numerical failure at step {step}: {reason}")]
    Numerical { step: usize, reason: String },

    #[error("datapoint {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("time points must be strictly increasing (violated at index {0})")]
    NotIncreasing(usize),

    #[error("dense Cholesky failed after jitter escalation (n = {n})")]
    Cholesky { n: usize },

    #[error("dense engine limited to n <= {cap} (got {n}); use the sequential engine")]
    DenseCap { n: usize, cap: usize },

    #[error("non-finite {term} in objective")]
    NonFiniteObjective { term: &'static str },

    #[error("non-finite objective when perturbing coordinate {coordinate} ({name})")]
    NonFiniteGradient { coordinate: usize, name: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: row {row}: {msg}")]
    Csv { path: String, row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_index(self, index: usize) -> Error {
        Error::AtIndex {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}
