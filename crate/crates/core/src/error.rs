use std::path::PathBuf;

/// Errors produced across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("feature layout error: {0}")]
    Layout(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular rotation input: {0}")]
    SingularRotation(String),

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    /// A configuration value is outside its declared range. `field` names it.
    #[error("invalid value for `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("window {window} is invalid for a sequence of {len} frames")]
    Window { window: usize, len: usize },

    #[error("diffusion step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("model state: {0}")]
    ModelState(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    /// A computation produced NaN or infinite values.
    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("motion generation failed: {0}")]
    Generation(String),

    #[error("band energy undefined for an all-zero signal")]
    ZeroSignal,

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
