use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied inconsistent shapes or parameters outside the
    /// documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("ill-conditioned {context}: condition estimate {condition_estimate:e}")]
    IllConditioned {
        context: String,
        condition_estimate: f64,
    },

    #[error("factorization failed for {0}")]
    Factorization(String),

    #[error("solution blew up at grid index {index}")]
    BlowUp { index: usize },

    #[error("ellipticity fails at t = {time} (smallest singular value {sigma_min:e})")]
    Ellipticity { time: f64, sigma_min: f64 },

    #[error("all kernel weights underflow; increase the bandwidth or use importance sampling")]
    WeightUnderflow,

    #[error("bridge undefined: transition density p(T, a, b) vanishes")]
    UndefinedBridge,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
