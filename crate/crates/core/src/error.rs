use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node `{node}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        node: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor shape {shape:?} holds {expected} values but {found} were supplied")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("parameter `{0}` contains a non-finite value")]
    NonFiniteParameter(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward pass requested without a matching forward pass")]
    NoForwardPass,

    #[error("gradients do not match parameters: {0}")]
    GradientMismatch(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("unknown layer identifier `{0}`")]
    UnknownLayer(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("class {class} has {count} inputs, at least 2 are required")]
    ClassTooSmall { class: usize, count: usize },

    #[error("all {0} neurons were removed by the variance filter")]
    AllNeuronsFiltered(usize),

    #[error("class {0} has no reference traces")]
    MissingClass(usize),

    #[error("duplicate score for input {0}")]
    DuplicateScore(usize),

    #[error("bad magic bytes in model file")]
    BadMagic,

    #[error("unsupported model format version {0}")]
    VersionMismatch(u8),

    #[error("model file truncated: {0}")]
    Truncated(String),

    #[error("malformed model descriptor: {0}")]
    Descriptor(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}
