use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("non-canonical run-length encoding: {0}")]
    NonCanonicalRle(String),
    #[error("bitmap has {got} pixels but the bounding box holds {expected}")]
    BitmapSize { expected: usize, got: usize },
    #[error("tile ({row}, {col}) is outside the {rows}x{cols} grid")]
    TileOutOfRange {
        row: u32,
        col: u32,
        rows: u32,
        cols: u32,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid class schema: {0}")]
    Schema(String),
    #[error("class id {0} is not part of the schema")]
    InvalidClass(u8),
    #[error("raster is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    RasterSize {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate mask id {0}")]
    DuplicateId(u64),
    #[error("non-finite feature value for mask {0}")]
    NonFiniteFeature(u64),
    #[error("feature vector for mask {id} has norm {norm}, not within tolerance of 1")]
    NotUnitNorm { id: u64, norm: f64 },
    #[error("mask {0} has no feature vector")]
    MissingFeature(u64),
    #[error("mask {0} lies outside the image")]
    MaskOutOfBounds(u64),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("unknown cluster {0}")]
    UnknownCluster(u64),
    #[error("unknown mask {0}")]
    UnknownMask(u64),
    #[error("mask {mask} is not a member of cluster {cluster}")]
    NotAMember { cluster: u64, mask: u64 },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Coarse grouping used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Invariant,
}

impl Error {
    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Schema(_) => ErrorClass::Config,
            Error::Invariant(_) => ErrorClass::Invariant,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
