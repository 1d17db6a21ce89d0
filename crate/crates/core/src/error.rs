use crate::sparse::Coord;

/// Errors produced anywhere in the compression pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed PLY: {0}")]
    MalformedPly(String),

    #[error("unknown shape kind `{0}`")]
    UnknownShapeKind(String),

    #[error("unknown texture kind `{0}`")]
    UnknownTextureKind(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("stride mismatch: {0}")]
    StrideMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("loss is not a scalar node of this tape")]
    DetachedLoss,

    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("partition has blocks without a density class")]
    UnsetClasses,

    #[error("reconstruction is missing carrier voxel {0:?}")]
    MissingVoxel(Coord),

    #[error("latent value {0} outside the 16-bit quantizer range")]
    Overflow(f64),

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("missing geometry: {0}")]
    MissingGeometry(String),

    #[error("alignment error: {0}")]
    AlignmentError(String),

    #[error("geometry digest mismatch: stream has {expected:#018x}, geometry hashes to {found:#018x}")]
    DigestMismatch { expected: u64, found: u64 },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("need at least 4 rate-distortion points, got {0}")]
    InsufficientPoints(usize),

    #[error("rate-distortion curves do not overlap")]
    NoOverlap,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
