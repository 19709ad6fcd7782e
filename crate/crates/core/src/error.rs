use alloc::boxed::Box;
use alloc::string::String;

/// Errors produced by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("mode {mode} out of range for a tensor with {ndim} modes")]
    ModeOutOfRange { mode: usize, ndim: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("rank {rank} is invalid for a mode of size {size}")]
    InvalidRank { rank: usize, size: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("compression plan: {0}")]
    Plan(String),
    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_layer(self, layer: &str) -> Error {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer {
                layer: layer.into(),
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
