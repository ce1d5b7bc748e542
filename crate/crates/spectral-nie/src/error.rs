use thiserror::Error;

/// Errors produced by the library. CLI exit codes group these into
/// usage (1), data/schema (2) and numerical (3) failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {context}{}", sample.map(|s| format!(" (sample {s})")).unwrap_or_default())]
    NonFinite {
        context: String,
        sample: Option<usize>,
    },

    #[error("singular linear system in quadrature solve")]
    SingularSystem,

    #[error("delay network integration diverged (sample {sample})")]
    Diverged { sample: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
            sample: None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
