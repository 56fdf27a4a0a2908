use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("unsupported or malformed WAV: {0}")]
    Format(String),

    #[error("unsupported channel count {0} (mono only)")]
    UnsupportedChannels(u16),

    #[error("empty signal")]
    EmptySignal,

    #[error("signal too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },

    #[error("frame count mismatch: expected {expected}, got {got}")]
    FrameMismatch { expected: usize, got: usize },

    #[error("invalid analysis: {0}")]
    InvalidAnalysis(String),

    #[error("non-positive envelope value at frame {frame}, bin {bin}")]
    NonPositiveEnvelope { frame: usize, bin: usize },

    #[error("need at least 2 voiced frames, found {0}")]
    InsufficientVoicedFrames(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("empty training corpus")]
    EmptyCorpus,

    #[error("unknown filter format version {0}")]
    VersionMismatch(u32),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("malformed corpus file name: {0}")]
    MalformedName(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("filter configuration mismatch: {0}")]
    FilterConfigMismatch(String),

    #[error("reference transcript is empty")]
    EmptyReference,

    #[error("score set has an empty side")]
    EmptyScores,

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    #[error("too few voiced frames: {0} (need 10)")]
    TooFewVoicedFrames(usize),

    #[error("alignment error: {0}")]
    AlignmentError(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}
