use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("count mismatch: {what} ({left} vs {right})")]
    CountMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("grid references instance {0} which has no record")]
    DanglingInstanceReference(u32),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("grid carries no instance labels")]
    NoLabels,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("zero-length vector")]
    ZeroVector,

    #[error("too few samples: {samples} samples for {clusters} clusters")]
    TooFewSamples { samples: usize, clusters: usize },

    #[error("every element is ignored")]
    AllIgnored,

    #[error("voxel grid specs differ")]
    SpecMismatch,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::MalformedFile { .. } => "MalformedFile",
            Error::CountMismatch { .. } => "CountMismatch",
            Error::DanglingInstanceReference(_) => "DanglingInstanceReference",
            Error::SizeMismatch(_) => "SizeMismatch",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::NoLabels => "NoLabels",
            Error::EmptyInput(_) => "EmptyInput",
            Error::ZeroVector => "ZeroVector",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::AllIgnored => "AllIgnored",
            Error::SpecMismatch => "SpecMismatch",
            Error::Config(_) => "Config",
            Error::Invariant(_) => "Invariant",
        }
    }

    /// Process exit code used by the command-line front end:
    /// 2 for configuration errors, 3 for data errors, 4 for invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Invariant(_) => 4,
            _ => 3,
        }
    }
}
