use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: batch statistics need at least two elements per channel, got {count}")]
    DegenerateBatch { op: &'static str, count: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("{op}: target is not one-hot at element {index}")]
    NotOneHot { op: &'static str, index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample {index} in a segmentation batch has no mask")]
    UnlabelledSample { index: usize },

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("adversarial strength alpha = {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
