use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the deconvolution pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate image: maximum sample is {max}, expected a positive value")]
    DegenerateImage { max: f32 },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error(
        "patch out of bounds: rows {top}..{bottom}, cols {left}..{right} \
         do not fit in a {height}x{width} image"
    )]
    PatchOutOfBounds {
        top: usize,
        left: usize,
        bottom: usize,
        right: usize,
        height: usize,
        width: usize,
    },

    #[error("kernel {kernel:?} is larger than image {image:?}")]
    KernelTooLarge {
        kernel: (usize, usize),
        image: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular inversion: transfer function vanishes at {count} frequencies and lambda is 0")]
    SingularInversion { count: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("unsupported image format in {0}")]
    UnsupportedFormat(PathBuf),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("empty corpus after excluding {0:?}")]
    EmptyCorpus(Option<String>),

    #[error("image {id} is {height}x{width}, smaller than the {window}x{window} sampling window")]
    ImageTooSmall {
        id: String,
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("no model supplied for method {method} on image {image}")]
    MissingModel { method: String, image: String },

    #[error("layer index {index} out of range for a {count}-layer model")]
    BadLayerIndex { index: usize, count: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
