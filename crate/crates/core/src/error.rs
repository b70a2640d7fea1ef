// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum HprError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector where a direction is required")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// `a` and its reflection are (anti)parallel, so the rotation plane is undefined.
    #[error("degenerate rotation plane: sin(gamma2) = {sin_gamma2:e}")]
    DegeneratePlane { sin_gamma2: f64 },

    #[error("norms differ by relative {relative:e}; rotation requires equal norms")]
    NormMismatch { relative: f64 },

    #[error("angle {0} outside [0, pi]")]
    AngleRange(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("layer {0} not present")]
    LayerAbsent(u32),

    #[error("no trained probe for layer {0}")]
    MissingProbe(u32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("file length mismatch: header implies {expected} bytes, file has {actual}")]
    FileLength { expected: u64, actual: u64 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = HprError> = std::result::Result<T, E>;

impl HprError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HprError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(HprError::DimensionMismatch { expected, actual })
    }
}
