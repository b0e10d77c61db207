use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure decoding a model file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("bad magic {0:02x?}, expected \"FCNP\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("unknown layer kind {0}")]
    UnknownLayerKind(u8),
    #[error("unknown activation tag {0}")]
    UnknownActivation(u8),
    #[error("file truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid layer table: {0}")]
    InvalidLayers(String),
}

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by its caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("model file: {0}")]
    Parse(#[from] ParseError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed data in {path}: {reason}")]
    Data { path: PathBuf, reason: String },

    #[error("scene generation failed after {attempts} attempts")]
    Generation { attempts: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("quantization overflow in conv layer {layer}: {count} values exceed the FP16 range")]
    Quantization { layer: usize, count: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("at pruning rate {rate}: {source}")]
    AtRate {
        rate: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::contract(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
