use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {}: {message}", path.display())]
    Header { path: PathBuf, message: String },

    #[error("size mismatch for {}: header implies {expected} bytes, found {found}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("could not place {n_teeth} non-overlapping teeth within {attempts} attempts")]
    Placement { n_teeth: usize, attempts: usize },

    #[error("attention over {tokens} tokens exceeds max_tokens = {max}; reduce zxy_levels or the input size")]
    TokenLimit { tokens: usize, max: usize },

    #[error("coarse mask has no foreground; fall back to a whole-volume ROI")]
    EmptyForeground,

    #[error("surface distances need two nonempty masks")]
    EmptyMask,

    #[error("training split is empty")]
    EmptySplit,

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("no parameter of the fine network matches the coarse network by name and shape")]
    NoMatchingParameters,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used by the command line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Header { .. } => "header",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::InvalidVolume(_) => "invalid_volume",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Config(_) => "config",
            Error::Placement { .. } => "placement",
            Error::TokenLimit { .. } => "token_limit",
            Error::EmptyForeground => "empty_foreground",
            Error::EmptyMask => "empty_mask",
            Error::EmptySplit => "empty_split",
            Error::Divergence { .. } => "divergence",
            Error::NoMatchingParameters => "no_matching_parameters",
            Error::Checkpoint(_) => "checkpoint",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
