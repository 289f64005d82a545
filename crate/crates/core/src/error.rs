use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Shape(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("imaginary residual {residual:e} exceeds {limit:e} in output channel {channel}")]
    ImaginaryResidual {
        channel: usize,
        residual: f64,
        limit: f64,
    },

    #[error("SVD did not converge for a {rows}x{cols} slice")]
    SvdNoConvergence { rows: usize, cols: usize },

    #[error("{path}: bad magic")]
    BadMagic { path: PathBuf },

    #[error("{path}: length mismatch (expected {expected} bytes, found {found})")]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: unsupported ndim {ndim} (must be 1..=4)")]
    BadRank { path: PathBuf, ndim: u32 },

    #[error("{path}: non-finite payload value at element {index}")]
    NonFinitePayload { path: PathBuf, index: usize },

    #[error("{path}: {field}: {message}")]
    Schema {
        path: PathBuf,
        field: String,
        message: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("layer {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn schema(
        path: impl Into<PathBuf>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Schema {
            path: path.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn in_layer(self, layer: impl Into<String>) -> Self {
        Error::Layer {
            layer: layer.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the command-line tool: 1 for numeric or
    /// verification failures, 2 for usage and input errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ImaginaryResidual { .. }
            | Error::SvdNoConvergence { .. }
            | Error::Verification(_) => 1,
            Error::Layer { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
