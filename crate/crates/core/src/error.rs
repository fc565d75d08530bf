use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty measure")]
    EmptyMeasure,
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("{what} of size {size} exceeds cap {cap}")]
    CapExceeded {
        what: &'static str,
        size: usize,
        cap: usize,
    },
    #[error("non-finite {what} at particle {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("rate {rate} exceeds declared bound {bound} at state {state:?}")]
    RateBoundExceeded {
        rate: f64,
        bound: f64,
        state: Vec<f64>,
    },
    #[error("time grid mismatch: {0}")]
    GridMismatch(String),
    #[error("unknown {kind} tag `{tag}`; valid tags: {valid}")]
    UnknownTag {
        kind: &'static str,
        tag: String,
        valid: String,
    },
    #[error("excluded parameter case: {0}")]
    ExcludedCase(String),
    #[error("envelope violated: q = {q} > M q0 = {bound}")]
    EnvelopeViolated { q: f64, bound: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
