use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown divergence `{name}`; valid members are: {valid}")]
    UnknownDivergence { name: String, valid: String },

    #[error("{function}({u}) is outside the domain of divergence `{divergence}`")]
    OutOfDomain {
        divergence: String,
        function: &'static str,
        u: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{context}: need at least {required} points, got {found}")]
    TooFewPoints {
        context: &'static str,
        required: usize,
        found: usize,
    },

    #[error("ratio at sample {index} ({point:?}) is {value}; expected a finite positive value")]
    NonFiniteRatio {
        index: usize,
        point: Vec<f64>,
        value: f64,
    },

    #[error("point {point:?} lies outside the support of {which}")]
    OutsideSupport {
        which: &'static str,
        point: Vec<f64>,
    },

    #[error("grid covers only {covered:.6} of the {which} mass (need at least 0.9999)")]
    InsufficientGridCoverage { which: &'static str, covered: f64 },

    #[error("network output is not finite at row {row}")]
    NonFiniteOutput { row: usize },

    #[error("vector field is not finite at particle {index}")]
    NonFiniteField { index: usize },

    #[error("particle {index} became non-finite in inner loop {inner_loop}")]
    NonFiniteParticle { inner_loop: usize, index: usize },

    #[error(
        "residual map is not invertible at grid point {index} (x = {x}): 1 + s*v'(x) = {jacobian}"
    )]
    NonInvertibleMap { index: usize, x: f64, jacobian: f64 },

    #[error("median bandwidth is degenerate: all particles coincide")]
    DegenerateBandwidth,

    #[error("run aborted at outer loop {outer}{}: {source}", inner.map(|i| format!(", inner loop {i}")).unwrap_or_default())]
    Aborted {
        outer: usize,
        inner: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: row {row}: {message}")]
    Data {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
