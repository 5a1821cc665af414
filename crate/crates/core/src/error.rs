use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("expected a {expected} volume, got {found}")]
    WrongValueKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("value {value} out of range {range}")]
    ValueOutOfRange { value: f64, range: &'static str },

    #[error("mask has no foreground voxels")]
    EmptyMask,

    #[error("no ribs remain after removing spine and shoulder components")]
    NoRibsRemain,

    #[error("component has no voxels")]
    EmptyComponent,

    #[error("curve has zero length")]
    DegenerateCurve,

    #[error("smoothing window {window} exceeds the {points} available points")]
    WindowTooLarge { window: usize, points: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("polyline is empty")]
    EmptyLine,

    #[error("segmentation point set is empty")]
    EmptySegmentation,

    #[error("phantom spec is infeasible: {0}")]
    SpecInfeasible(String),

    #[error("oracle input too large: {pairs} pair evaluations exceed the cap of {cap}")]
    TooLarge { pairs: u64, cap: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
