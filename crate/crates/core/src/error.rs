use std::path::PathBuf;

use crate::grid::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty volume")]
    EmptyVolume,

    #[error("empty mask: no voxels to evaluate")]
    EmptyMask,

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: Dims, right: Dims },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at voxel index {index}")]
    NonFinite { index: usize },

    #[error("overlap fraction out of range: {0} (expected 0 <= p < 1)")]
    OverlapOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("magic mismatch: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: String, found: String },

    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: u64, actual: u64 },

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("missing prediction for retained tile at lattice index {0:?}")]
    MissingTile([usize; 3]),

    #[error("protocol error at tile {tile_index}: {message}")]
    Protocol { tile_index: u32, message: String },

    #[error("external predictor failed at tile {tile_index}: {message}")]
    ExternalProcess { tile_index: u32, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the external predictor stream or process.
    pub fn is_predictor_failure(&self) -> bool {
        matches!(self, Error::Protocol { .. } | Error::ExternalProcess { .. })
    }
}
