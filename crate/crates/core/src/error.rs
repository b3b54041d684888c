use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = UdorError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum UdorError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} parts")]
    Index { index: usize, len: usize },

    #[error("non-finite value in {component}")]
    Numeric { component: String },

    #[error("format error: {0}")]
    Format(String),

    /// Two slots resolved to the same latent part.
    #[error("degenerate disassembly: {0}")]
    Degenerate(String),

    #[error("backend error: {0}")]
    Backend(#[from] tch::TchError),
}

impl UdorError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UdorError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        UdorError::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        UdorError::Shape(msg.into())
    }

    pub fn numeric(component: impl Into<String>) -> Self {
        UdorError::Numeric {
            component: component.into(),
        }
    }
}
