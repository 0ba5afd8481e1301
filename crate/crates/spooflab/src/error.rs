use crate::watermark::SchemeTag;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty input")]
    EmptyInput,
    #[error("context has length {got}, expected {expected}")]
    ContextLength { expected: usize, got: usize },
    #[error("text of length {got} is too short, need more than {min} tokens")]
    TextTooShort { min: usize, got: usize },
    #[error("no kept positions after dedup")]
    ZeroKeptPositions,
    #[error("score sequence is constant on kept positions")]
    ConstantScores,
    #[error("color sequence is constant on kept positions")]
    ConstantColors,
    #[error("too few kept positions: {got} < {min}")]
    TooFewKept { min: usize, got: usize },
    #[error("segment {index} has {len} tokens, prefix length {c} leaves no testable suffix")]
    SegmentTooShort { index: usize, len: usize, c: usize },
    #[error("mixed schemes: {0:?} vs {1:?}")]
    MixedSchemes(SchemeTag, SchemeTag),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no spoofed texts passed the watermark detector")]
    NoSpoofsPassed,
    #[error("too few samples: {got} < {min}")]
    TooFewSamples { min: usize, got: usize },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
