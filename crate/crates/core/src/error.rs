use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field is out of range or missing.
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Not enough samples for the requested operation.
    #[error("{what}: requires {required} samples, {available} available")]
    Sizing {
        what: String,
        required: usize,
        available: usize,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    Shape {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by `{op}`")]
    Numeric { op: String },

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("model state error: {0}")]
    State(String),

    #[error("model `{model}` failed: {source}")]
    Model {
        model: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn sizing(what: impl Into<String>, required: usize, available: usize) -> Self {
        Error::Sizing {
            what: what.into(),
            required,
            available,
        }
    }

    pub(crate) fn shape(op: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op: op.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config { .. }
            | Error::Sizing { .. }
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Domain(_)
            | Error::Serde(_) => true,
            // a model failing mid-experiment is a runtime failure
            _ => false,
        }
    }
}
