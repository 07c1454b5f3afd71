//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image role mismatch: expected {expected}, got {got}")]
    RoleMismatch { expected: &'static str, got: &'static str },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty histogram")]
    EmptyHistogram,

    #[error("invalid threshold band: lo {lo} > hi {hi}")]
    InvalidBand { lo: f32, hi: f32 },

    #[error("channel index {index} out of range for {channels}-channel image")]
    ChannelOutOfRange { index: usize, channels: usize },

    #[error("output dimensions must be nonzero")]
    ZeroOutputDimension,

    #[error("chessboard corners not found: {0}")]
    CornersNotFound(String),

    #[error("ambiguous corner ordering: {0}")]
    AmbiguousOrdering(String),

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("singular homography")]
    SingularHomography,

    #[error("need at least {needed} views, got {got}")]
    InsufficientViews { needed: usize, got: usize },

    #[error("singular calibration system: {0}")]
    SingularSystem(String),

    #[error("distortion inversion did not converge (|k| outside supported range)")]
    NonConvergentInversion,

    #[error("no hand component found above the area floor")]
    NoHandFound,

    #[error("wrist line invalid or outside the image: {0}")]
    WristOutsideImage(String),

    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("gradient contains NaN")]
    NanGradient,

    #[error("no forward pass recorded before backward")]
    MissingForward,

    #[error("fold {0} is empty")]
    EmptyFold(usize),

    #[error("empty hand mask for task-2 input")]
    EmptyHandMask,

    #[error("need at least {needed} groups/samples, got {got}")]
    TooFewGroups { needed: usize, got: usize },

    #[error("group {index} has fewer than 2 values")]
    GroupTooSmall { index: usize },

    #[error("group {index} has zero variance")]
    ZeroVariance { index: usize },

    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("constant input: rank correlation undefined")]
    ConstantInput,

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("unknown task id {0} (valid: 1..=30)")]
    UnknownTask(u8),

    #[error("unknown grouping dimension: {0}")]
    UnknownDimension(String),

    #[error("records missing time offsets: {0:?}")]
    MissingOffsets(Vec<u32>),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("board pose places corners outside the frame")]
    BoardOutOfFrame,

    #[error("empty record set")]
    EmptyRecords,

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(String),

    #[error("{0}")]
    Other(String),
}
