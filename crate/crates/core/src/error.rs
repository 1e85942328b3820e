use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: kernel {kernel:?} larger than input {input:?}")]
    KernelTooLarge {
        op: &'static str,
        kernel: (usize, usize),
        input: (usize, usize),
    },

    #[error("reflect_pad: pad {pad} must be smaller than extent {extent}")]
    PadTooLarge { pad: usize, extent: usize },

    #[error("{op}: extent {extent} is not divisible by {divisor}")]
    NotDivisible {
        op: &'static str,
        extent: usize,
        divisor: usize,
    },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("batch_norm: training mode needs at least 2 values per channel, got {count}")]
    BatchTooSmall { count: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint: parameter `{name}` has shape {found:?}, model expects {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite value in {term} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        term: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("{}: truncated at byte offset {offset}", path.display())]
    Truncated { path: PathBuf, offset: u64 },

    #[error("data: {0}")]
    Data(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
