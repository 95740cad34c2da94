use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("manifest references missing files: {}", .paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFile { paths: Vec<PathBuf> },
    #[error("class id {id} is not in the domain of remap table `{table}`")]
    UnknownClassId { id: u8, table: String },
    #[error("unknown class vocabulary `{0}`")]
    UnknownVocabulary(String),
    #[error("malformed remap table: {0}")]
    MalformedRemapTable(String),
    #[error("dimensions {height}x{width} are not divisible by {factor}")]
    IndivisibleDimensions {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("image {height}x{width} is smaller than crop {crop}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        crop: usize,
    },
    #[error("disk radius must be non-negative, got {0}")]
    NegativeRadius(i64),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature extractor unavailable: {0}")]
    ExtractorUnavailable(String),
    #[error("score {0} outside the open interval (0, 1)")]
    DomainError(f64),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("loss component `{name}` is not finite ({value})")]
    NonFiniteComponent { name: &'static str, value: f64 },
    #[error("non-finite loss at step {step}; diagnostics written to {dump}")]
    NonFiniteLoss { step: u64, dump: PathBuf },
    #[error("stage plan is empty or has a stage without epochs")]
    EmptyPlan,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedManifest { .. }
                | Error::MissingFile { .. }
                | Error::UnknownClassId { .. }
                | Error::UnknownVocabulary(_)
                | Error::MalformedRemapTable(_)
                | Error::IndivisibleDimensions { .. }
                | Error::ImageTooSmall { .. }
                | Error::NegativeRadius(_)
                | Error::InvalidSpec(_)
                | Error::InvalidLabel(_)
                | Error::EmptyPlan
                | Error::SpecMismatch(_)
                | Error::Decode { .. }
                | Error::Config(_)
        )
    }
}
