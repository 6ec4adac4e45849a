use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: {audio} audio tokens for {text} text tokens (expected {expected})")]
    LengthMismatch {
        text: usize,
        audio: usize,
        expected: usize,
    },
    #[error("TA4 grammar violation: {0}")]
    GrammarViolation(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("transcript mismatch: {0}")]
    TranscriptMismatch(String),
    #[error("target has no audio tokens")]
    EmptyTarget,
    #[error("instance too large to enumerate: {0}")]
    InstanceTooLarge(String),
    #[error("reference transcript is empty")]
    EmptyReference,
    #[error("group too small: {0} members (need at least 2)")]
    GroupTooSmall(usize),
    #[error("non-finite loss at {stage} step {step}: {detail}")]
    NonFiniteLoss {
        stage: &'static str,
        step: usize,
        detail: String,
    },
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("input segments are not sorted by start time (index {0})")]
    UnsortedInput(usize),
    #[error("scene {0} has no style label for its final turn")]
    MissingLabel(String),
    #[error("insufficient scenes with {turns} turns: need {needed}, have {available}")]
    InsufficientScenes {
        turns: usize,
        needed: usize,
        available: usize,
    },
    #[error("too few records: {0} (need at least 2)")]
    TooFewRecords(usize),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("artifact {} does not match its manifest checksum", .0.display())]
    ChecksumMismatch(PathBuf),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::GrammarViolation(_) => "GrammarViolation",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::TranscriptMismatch(_) => "TranscriptMismatch",
            Error::EmptyTarget => "EmptyTarget",
            Error::InstanceTooLarge(_) => "InstanceTooLarge",
            Error::EmptyReference => "EmptyReference",
            Error::GroupTooSmall(_) => "GroupTooSmall",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::MalformedLine { .. } => "MalformedLine",
            Error::UnsortedInput(_) => "UnsortedInput",
            Error::MissingLabel(_) => "MissingLabel",
            Error::InsufficientScenes { .. } => "InsufficientScenes",
            Error::TooFewRecords(_) => "TooFewRecords",
            Error::MissingArtifact(_) => "MissingArtifact",
            Error::ChecksumMismatch(_) => "ChecksumMismatch",
            Error::UnsupportedVersion { .. } => "UnsupportedVersion",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
