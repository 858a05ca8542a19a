use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("image must be square, got {width}x{height}")]
    NonSquareImage { width: usize, height: usize },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("infeasible mask: {lines} lines requested but the center band needs {band}")]
    InfeasibleMask { lines: usize, band: usize },
    #[error("negative activity {value} at index {index}")]
    NegativeActivity { index: usize, value: f64 },
    #[error("index {index} out of range for {len} noise levels")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("non-finite iterate at noise level {step}")]
    NonFiniteIterate { step: usize },
    #[error("score field vanished on channel {channel} at noise level {step}")]
    ZeroScoreField { channel: usize, step: usize },
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("reference image has zero norm or zero range")]
    ZeroReference,
    #[error("empty list")]
    EmptyList,
    #[error("channel count mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("noise schedule of the score model differs from the sampler schedule")]
    ScheduleMismatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
