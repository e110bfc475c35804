use std::path::PathBuf;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: needed {needed} more bytes")]
    TruncatedFile { needed: usize },
    #[error("value out of range: {value} at index {index} (expected [0,1])")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing files in {dir}: {what}")]
    MissingFiles { dir: PathBuf, what: String },
    #[error("record size mismatch: record {index} has {got} bytes, expected {expected}")]
    RecordSizeMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("label out of range: {label} at record {index} (n_classes {n_classes})")]
    LabelOutOfRange {
        index: usize,
        label: u32,
        n_classes: usize,
    },
    #[error("class {class} has only {available} examples, need {requested}")]
    InsufficientClassCount {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("training loss diverged (NaN at epoch {epoch})")]
    DivergedLoss { epoch: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("negative input at index {index}: {value}")]
    NegativeInput { index: usize, value: f64 },
    #[error("empty pair list")]
    EmptyPairs,
    #[error("grid side {grid} larger than map side {map}")]
    GridLargerThanMap { grid: usize, map: usize },
    #[error("too few pairs: {0} (need at least 2)")]
    TooFewPairs(usize),
    #[error("invariance score undefined: both G and H below tolerance")]
    Undefined,
    #[error("training set contains a single class")]
    SingleClass,
    #[error("empty evaluation set")]
    EmptySet,
    #[error("model parse failure in {path}: {reason}")]
    ModelParse { path: PathBuf, reason: String },
    #[error("bad threshold: {0} (must be >= 0)")]
    BadThreshold(f64),
    #[error("config parse failure: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable short name of the variant, for CLI stderr reporting.
    pub fn name(&self) -> &'static str {
        match self {
            Error::BadMagic { .. } => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::ValueOutOfRange { .. } => "ValueOutOfRange",
            Error::IoFailure { .. } => "IoFailure",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::MissingFiles { .. } => "MissingFiles",
            Error::RecordSizeMismatch { .. } => "RecordSizeMismatch",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::InsufficientClassCount { .. } => "InsufficientClassCount",
            Error::EmptyInput => "EmptyInput",
            Error::DivergedLoss { .. } => "DivergedLoss",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NegativeInput { .. } => "NegativeInput",
            Error::EmptyPairs => "EmptyPairs",
            Error::GridLargerThanMap { .. } => "GridLargerThanMap",
            Error::TooFewPairs(_) => "TooFewPairs",
            Error::Undefined => "Undefined",
            Error::SingleClass => "SingleClass",
            Error::EmptySet => "EmptySet",
            Error::ModelParse { .. } => "ModelParse",
            Error::BadThreshold(_) => "BadThreshold",
            Error::ConfigParse(_) => "ConfigParse",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
