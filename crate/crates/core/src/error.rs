use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum LatteError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is not tangent to the base point (|<x, v>_L| = {0:e})")]
    NotTangent(f64),

    #[error("degenerate centroid: |<z, z>_L| = {0:e}")]
    DegenerateCentroid(f64),

    #[error("unknown subject id {0}")]
    UnknownSubject(u32),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<LatteError>,
    },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl LatteError {
    pub fn at_stage(self, stage: &'static str) -> Self {
        LatteError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Binary container errors (EEGC datasets and LATC checkpoints).
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated file: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("malformed content: {0}")]
    Malformed(String),
}

pub type Result<T, E = LatteError> = std::result::Result<T, E>;
