use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::RoiName;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate frame: anchor points coincide")]
    DegenerateFrame,

    #[error("invalid landmarks for subject `{subject}`: {reason}")]
    InvalidLandmarks { subject: String, reason: String },

    #[error("ROI {roi} exceeds image bounds ({width}x{height})")]
    RoiOutOfBounds {
        roi: RoiName,
        width: usize,
        height: usize,
    },

    #[error("patch too small for {what}: {width}x{height}, need at least {min}x{min}")]
    PatchTooSmall {
        what: &'static str,
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("undefined roughness: {0}")]
    UndefinedRoughness(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("both classes must be present: {0}")]
    SingleClass(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unreachable entropy target {target} bits: {reason}")]
    UnreachableEntropy { target: f64, reason: String },

    #[error("feature extraction failed for {} ROI(s): {}", .0.len(), format_roi_failures(.0))]
    RoiFailures(Vec<(RoiName, Error)>),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("image format error in {path}: {message}")]
    ImageFormat { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_roi_failures(failures: &[(RoiName, Error)]) -> String {
    failures
        .iter()
        .map(|(roi, err)| format!("{roi}: {err}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the caller's data or arguments rather than a
    /// defect in the library.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::NonFinite(_) | Error::DimensionMismatch { .. })
    }
}
