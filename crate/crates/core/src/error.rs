use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor shape {shape:?} does not match data length {len}")]
    ShapeData { shape: Vec<usize>, len: usize },

    #[error("layer {layer} ({kind}): expected input shape {expected}, got {got:?}")]
    LayerShape {
        layer: usize,
        kind: &'static str,
        expected: String,
        got: Vec<usize>,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("forward trace does not belong to this model (trace for model {trace}, model is {model})")]
    StaleTrace { trace: u64, model: u64 },

    #[error("non-finite value produced by layer {layer} ({kind})")]
    NonFinite { layer: usize, kind: &'static str },

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid label map: {0}")]
    LabelMap(String),

    #[error("label {label} out of range (num classes {classes})")]
    LabelRange { label: usize, classes: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at step {step} (last finite loss {last_finite:?})")]
    Diverged { step: usize, last_finite: Option<f64> },

    #[error("{what}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{what}: truncated file, expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: size {len} is not a multiple of the {record}-byte record size")]
    RecordSize { path: PathBuf, len: usize, record: usize },

    #[error("unsupported {what} format version {version}")]
    Version { what: &'static str, version: u32 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
