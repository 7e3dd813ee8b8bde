use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("missing key `{0}`")]
    MissingKey(String),

    #[error("invalid `{field}`: {message}")]
    Invariant { field: String, message: String },

    #[error("query outside domain of {what}: {point:?}")]
    OutOfDomain { what: String, point: Vec<f64> },

    #[error("below cutoff: mode {mode} not trapped at k0 = {k0:e} (cutoff estimate {cutoff:?})")]
    BelowCutoff { mode: usize, k0: f64, cutoff: Option<f64> },

    #[error("{} dispersion nodes below cutoff, first (x, y, k0) = {:?}", nodes.len(), nodes.first())]
    NodesBelowCutoff { nodes: Vec<[f64; 3]> },

    #[error("below cutoff: k0 values {k0:?} have no trapped mode {mode}")]
    BandBelowCutoff { mode: usize, k0: Vec<f64> },

    #[error("near-degenerate spectrum: modes {a} and {b} differ by {gap:e}")]
    Degenerate { a: usize, b: usize, gap: f64 },

    #[error("eigenvalue ordering violated between modes {a} and {b}")]
    Ordering { a: usize, b: usize },

    #[error("nonpropagating direction: dq/dk0 = {0:e}")]
    NonPropagating(f64),

    #[error("step size underflow at tau = {0:e}")]
    StepUnderflow(f64),

    #[error("caustic in segment near sample {index}; locate it with detect_caustics")]
    CausticInSegment { index: usize },

    #[error("at caustic: Jacobi matrix is singular")]
    AtCaustic,

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("empty band: {0}")]
    EmptyBand(String),

    #[error("degenerate source parameterization at (mu, nu) = ({mu:e}, {nu:e})")]
    DegenerateSource { mu: f64, nu: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invariant(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn out_of_domain(what: impl Into<String>, point: &[f64]) -> Self {
        Error::OutOfDomain {
            what: what.into(),
            point: point.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
