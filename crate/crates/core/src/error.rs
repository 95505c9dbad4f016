use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cannot be projected: {0}")]
    DegeneratePoint(String),
    #[error("inverse depth must be positive, got {0}")]
    InvalidDepth(f64),
    #[error("keyframe {0} has no valid depth pixels")]
    EmptyDepth(usize),
    #[error("graph has no keyframes")]
    NoKeyframes,
    #[error("graph needs at least two keyframes and one edge")]
    EmptyGraph,
    #[error("reduced system is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("energy increased {0} consecutive times after damping escalation")]
    DivergedEnergy(usize),
    #[error("no flow or track data to measure motion")]
    NoMotionData,
    #[error("image resolution missing from configuration")]
    MissingResolution,
    #[error("provider failed on frame {frame}: {message}")]
    ProviderFailure { frame: usize, message: String },
    #[error("trajectory has zero length and cannot be normalized")]
    NormalizationDegenerate,
    #[error("relative pose has zero baseline")]
    ZeroBaseline,
    #[error("no correspondence pair with a valid Sampson denominator")]
    NoValidPairs,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing provider files: {0:?}")]
    MissingFiles(Vec<PathBuf>),
}

impl Error {
    /// Stable, machine-parsable class name used by the command line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::DegeneratePoint(_) => "DegeneratePoint",
            Error::InvalidDepth(_) => "InvalidDepth",
            Error::EmptyDepth(_) => "EmptyDepth",
            Error::NoKeyframes => "NoKeyframes",
            Error::EmptyGraph => "EmptyGraph",
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::DivergedEnergy(_) => "DivergedEnergy",
            Error::NoMotionData => "NoMotionData",
            Error::MissingResolution => "MissingResolution",
            Error::ProviderFailure { .. } => "ProviderFailure",
            Error::NormalizationDegenerate => "NormalizationDegenerate",
            Error::ZeroBaseline => "ZeroBaseline",
            Error::NoValidPairs => "NoValidPairs",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Config(_) => "ConfigError",
            Error::Parse { .. } => "ParseError",
            Error::Io { .. } => "IoError",
            Error::MissingFiles(_) => "MissingFiles",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
