use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while reading or writing one of the binary container formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated body: expected {expected} bytes, found {found}")]
    TruncatedBody { expected: usize, found: usize },
    #[error("label count mismatch: header declares {frames} frames, body holds {labels} labels")]
    LabelCountMismatch { frames: usize, labels: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("trailing bytes after body: {0}")]
    TrailingBytes(usize),
}

impl FormatError {
    /// Stable identifier for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::BadMagic { .. } => "bad-magic",
            FormatError::TruncatedHeader => "truncated-header",
            FormatError::TruncatedBody { .. } => "truncated-body",
            FormatError::LabelCountMismatch { .. } => "label-count-mismatch",
            FormatError::InvalidHeader(_) => "invalid-header",
            FormatError::TrailingBytes(_) => "trailing-bytes",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("degenerate variance on channel {channel}")]
    DegenerateVariance { channel: &'static str },
    #[error("dataset too small: need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("pulse train exceeds frame: needs {needed_us:.3} us, frame holds {frame_us:.3} us")]
    PulseTrainExceedsFrame { needed_us: f64, frame_us: f64 },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("undefined SNR: frame has no nonzero samples")]
    UndefinedSnr,
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("degenerate noise model: variance must be positive")]
    DegenerateNoise,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("frame length {len} is not divisible by the required factor {divisor}; pad or crop to a multiple of {divisor}")]
    IndivisibleLength { len: usize, divisor: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("label {label} out of range for {n_cls} classes")]
    LabelOutOfRange { label: usize, n_cls: usize },
    #[error("class count mismatch: classifier has {expected} classes, dataset has {found}")]
    ClassCountMismatch { expected: usize, found: usize },
    #[error("cell (class {class_id}, snr {snr_db} dB) has {available} frames, {requested} requested")]
    InsufficientCell {
        class_id: u16,
        snr_db: i16,
        available: usize,
        requested: usize,
    },
    #[error("dataset is unlabeled")]
    Unlabeled,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("pca dims {requested} exceed the limit {limit}")]
    PcaDims { requested: usize, limit: usize },
    #[error("linear algebra failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::Io(_) | Error::Numerical(_)
        )
    }
}
