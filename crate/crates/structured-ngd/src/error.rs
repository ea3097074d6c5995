use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller broke a documented precondition (shape mismatch, unsupported structure, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A factor or Fisher block is singular or too badly conditioned to use.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A value fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The objective does not provide a callback the estimator needs.
    #[error("objective lacks capability `{0}`")]
    Capability(&'static str),

    /// Monte-Carlo estimation produced something unusable.
    #[error("estimator failure: {0}")]
    Estimator(String),

    /// An optimisation step failed; the state from before the step is kept by the caller.
    #[error("step {iter} failed: {source}")]
    Step {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    /// Bad command-line or manifest input.
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn singular(msg: impl Into<String>) -> Self {
        Error::Singular(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures caused by user input rather than numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_) | Error::Json(_))
    }
}
