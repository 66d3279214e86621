use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite objective: first non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("non-finite value in {context}")]
    NonFiniteValue { context: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate importance weights: {0}")]
    DegenerateWeights(String),

    #[error("degenerate energy variance ({0:e}) in beta estimation")]
    DegenerateVariance(f64),

    #[error("rejection sampling aborted: acceptance rate {rate:e} below {min:e}")]
    LowAcceptance { rate: f64, min: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid flow file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
