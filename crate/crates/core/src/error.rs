use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph has no layers")]
    EmptyGraph,

    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid layer {layer}: {message}")]
    InvalidLayer { layer: usize, message: String },

    #[error("non-finite value produced in {context}")]
    NonFiniteValue { context: String },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("weights checksum mismatch: manifest says {expected}, blob hashes to {got}")]
    ChecksumMismatch { expected: String, got: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported channel conversion: {from} -> {to} channels")]
    UnsupportedChannels { from: usize, to: usize },

    #[error("cannot decode image {file}: {message}")]
    Decode { file: PathBuf, message: String },

    #[error("probe set is empty")]
    EmptyProbe,

    #[error("bad sample size {n}: probe holds {available} images")]
    BadSampleSize { n: usize, available: usize },

    #[error("unit {unit} out of range for representation of dimension {dim}")]
    UnitOutOfRange { unit: usize, dim: usize },

    #[error("exact mode needs {dim} passes per image, above the cap of {cap}")]
    ExactModeTooLarge { dim: usize, cap: usize },

    #[error("attribution sets were computed on different probes: {0}")]
    ProbeMismatch(String),

    #[error("attribution sets use different methods: {0} vs {1}")]
    MethodMismatch(String, String),

    #[error("unknown model id {0:?}")]
    UnknownModel(String),

    #[error("duplicate model id {0:?}")]
    DuplicateModel(String),

    #[error("degenerate activation subspace for {0}")]
    DegenerateSubspace(String),

    #[error("K = {k} outside 1..={len}")]
    BadK { k: usize, len: usize },

    #[error("relevant set is empty")]
    EmptyRelevant,

    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),

    #[error("incomplete ranking table: {0}")]
    IncompleteTable(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("need at least 2 models, got {0}")]
    TooFewModels(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable variant name for structured error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyGraph => "EmptyGraph",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::InvalidLayer { .. } => "InvalidLayer",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::Parse { .. } => "Parse",
            Error::ChecksumMismatch { .. } => "ChecksumMismatch",
            Error::Io { .. } => "Io",
            Error::UnsupportedChannels { .. } => "UnsupportedChannels",
            Error::Decode { .. } => "Decode",
            Error::EmptyProbe => "EmptyProbe",
            Error::BadSampleSize { .. } => "BadSampleSize",
            Error::UnitOutOfRange { .. } => "UnitOutOfRange",
            Error::ExactModeTooLarge { .. } => "ExactModeTooLarge",
            Error::ProbeMismatch(_) => "ProbeMismatch",
            Error::MethodMismatch(..) => "MethodMismatch",
            Error::UnknownModel(_) => "UnknownModel",
            Error::DuplicateModel(_) => "DuplicateModel",
            Error::DegenerateSubspace(_) => "DegenerateSubspace",
            Error::BadK { .. } => "BadK",
            Error::EmptyRelevant => "EmptyRelevant",
            Error::ZeroVariance(_) => "ZeroVariance",
            Error::IncompleteTable(_) => "IncompleteTable",
            Error::IdMismatch(_) => "IdMismatch",
            Error::TooFewModels(_) => "TooFewModels",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
