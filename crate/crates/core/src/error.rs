use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("non-positive spectrum: smallest eigenvalue {min:e}")]
    NonPositiveSpectrum { min: f64 },

    #[error("numerically rank-deficient matrix: |r_ii| ratio {ratio:e}")]
    RankDeficient { ratio: f64 },

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error in `{field}`: {msg}")]
    Config { field: &'static str, msg: String },

    #[error("eigensolver failed to converge after {0} iterations")]
    NoConvergence(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{context}: {source}")]
    Layer {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (largest parameter norm {param_norm:e} in `{param}`)"
    )]
    NumericalAbort {
        epoch: usize,
        batch: usize,
        param: String,
        param_norm: f64,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Wraps an error with the layer or branch it came from.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Layer {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all layer annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } => source.root(),
            other => other,
        }
    }
}
