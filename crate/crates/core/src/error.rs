use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
///
/// Every failure mode that callers may need to tell apart has its own
/// variant; [`Error::code`] gives a stable short identifier for each.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed JSON in {context}: {message}")]
    Json { context: String, message: String },
    #[error("checksum mismatch: manifest has {expected}, file hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("unsupported dtype {0:?} (only \"f32le\" is supported)")]
    UnsupportedDtype(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("zero vector for id {0:?}")]
    ZeroRow(String),
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("missing section {0}")]
    MissingSection(&'static str),
    #[error("sections out of order")]
    SectionOrder,
    #[error("empty section {0}")]
    EmptySection(&'static str),
    #[error("judge {index} failed: {message}")]
    Judge { index: usize, message: String },
    #[error("generator failed: {0}")]
    Generator(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    CheckpointVersion { found: u8, expected: u8 },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingFile(_) => "missing_file",
            Error::Json { .. } => "malformed_json",
            Error::ChecksumMismatch { .. } => "checksum_mismatch",
            Error::CountMismatch(_) => "count_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::UnsupportedDtype(_) => "unsupported_dtype",
            Error::DuplicateId(_) => "duplicate_id",
            Error::UnknownId(_) => "unknown_id",
            Error::Degenerate(_) => "degenerate_input",
            Error::ZeroRow(_) => "zero_row",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Line { .. } => "invalid_line",
            Error::TokenOutOfRange { .. } => "token_out_of_range",
            Error::MissingSection(_) => "missing_section",
            Error::SectionOrder => "section_order",
            Error::EmptySection(_) => "empty_section",
            Error::Judge { .. } => "judge_failure",
            Error::Generator(_) => "generator_failure",
            Error::Checkpoint(_) => "checkpoint_format",
            Error::CheckpointVersion { .. } => "checkpoint_version",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn json(context: impl Into<String>, err: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
