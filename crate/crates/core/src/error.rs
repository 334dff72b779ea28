use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: expected x1 <= x2 and y1 <= y2 with finite coordinates")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("IoU undefined: both boxes have zero area")]
    DegenerateUnion,

    #[error("GIoU undefined: enclosing box has zero area")]
    DegenerateHull,

    #[error("overlap {overlap} is below the true-positive threshold {tau}")]
    NotATruePositive { overlap: f64, tau: f64 },

    #[error("scenario has no positive anchors")]
    NoPositives,

    #[error("positive anchor {anchor} has no predicted box")]
    MissingBox { anchor: usize },

    #[error("anchor {anchor} references ground truth {gt}, but only {n_gts} exist")]
    InvalidGtIndex { anchor: usize, gt: usize, n_gts: usize },

    #[error("target {target} exceeds primary term {primary} for positive {positive} and negative {negative}")]
    TargetExceedsPrimary { positive: usize, negative: usize, primary: f64, target: f64 },

    #[error("evaluation has neither detections nor ground truths")]
    EmptyEvaluation,

    #[error("evaluation has no ground truths")]
    NoGroundTruths,

    #[error("ranking correlation needs at least two positives with distinct ranks")]
    DegenerateCorrelation,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{path}: {message}")]
    Validation { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { path: path.into(), message: message.into() }
    }

    /// `true` for errors caused by malformed input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::TargetExceedsPrimary { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
