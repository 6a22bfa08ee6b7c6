use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerics: shape mismatch: {0}")]
    Shape(String),

    #[error("numerics: non-finite value: {0}")]
    NonFinite(String),

    #[error("numerics: matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("vae: non-finite value in layer {layer} ({what})")]
    Layer { layer: usize, what: &'static str },

    #[error("vae: no training windows")]
    EmptyData,

    #[error("ruminate: every importance weight is zero or non-finite")]
    DegenerateWeights,

    #[error("retrain: window {index}: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("adjusters: pair set is empty")]
    EmptyPairs,

    #[error("retrain: loss increased for {0} consecutive iterations, step size too large")]
    Divergence(usize),

    #[error("detect: too few excesses over the initial threshold ({found} < {required})")]
    TooFewExcesses { found: usize, required: usize },

    #[error("detect: moment estimate of the tail shape is invalid (xi = {0})")]
    InvalidMoments(f64),

    #[error("detect: labels contain no anomalies")]
    NoPositiveLabels,

    #[error("detect: transfer distance is undefined when f1 = 0")]
    UndefinedDistance,

    #[error("dataio: row {row}: {msg}")]
    Csv { row: usize, msg: String },

    #[error("dataio: state file line {line}: {msg}")]
    StateFormat { line: usize, msg: String },

    #[error("dataio: {0}")]
    Io(#[from] std::io::Error),

    #[error("dataio: {path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
