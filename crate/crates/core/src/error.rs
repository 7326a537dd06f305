use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {reason} (shape {shape:?})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("patch tiling violated along {dimension}: {detail}")]
    Tiling {
        dimension: &'static str,
        detail: String,
    },

    #[error("delta must be in [-1,1], got {0}")]
    DeltaOutOfRange(f64),

    #[error("transition matrix is singular (det = {0})")]
    Singular(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("band for structural SE {se_d} D does not fit in the image: {detail}")]
    BandOutOfBounds { se_d: f64, detail: String },

    #[error("manifest not found in {0}")]
    ManifestNotFound(PathBuf),

    #[error("malformed dataset: {0}")]
    Dataset(String),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("truncated file {0}")]
    Truncated(PathBuf),

    #[error("unexpected end of checkpoint")]
    CheckpointTruncated,

    #[error("checkpoint: unsupported version {0}")]
    CheckpointVersion(u16),

    #[error("checkpoint: missing parameter block {0:?}")]
    MissingBlock(String),

    #[error("checkpoint: unknown parameter block {0:?}")]
    UnknownBlock(String),

    #[error("checkpoint: duplicate parameter block {0:?}")]
    DuplicateBlock(String),

    #[error("checkpoint: block {name:?} has shape {found:?}, model expects {expected:?}")]
    BlockShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: {terms}")]
    NonFiniteLoss { step: usize, terms: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("requested {requested} frames but the volume has {available}")]
    FrameCount { requested: usize, available: usize },

    #[error("image is {found_h}x{found_w}, model expects {expected_h}x{expected_w}")]
    GeometryMismatch {
        expected_h: usize,
        expected_w: usize,
        found_h: usize,
        found_w: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
