use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("config syntax error on line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("invalid config value for `{field}`: {reason}")]
    ConfigInvalid { field: &'static str, reason: String },

    #[error("bad magic: expected \"MMH1\" with kind '{expected}'")]
    BadMagic { expected: char },

    #[error("file truncated: {0}")]
    TruncatedFile(String),

    #[error("file has {0} trailing bytes beyond its declared payload")]
    TrailingBytes(u64),

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("label row {0} has no category set")]
    EmptyLabelRow(usize),

    #[error("manifest syntax error on line {line}: {message}")]
    ManifestSyntax { line: usize, message: String },

    #[error("id {0} appears in both the query and the retrieval split")]
    OverlapQueryRetrieval(u64),

    #[error("id {id} is out of range for {count} items")]
    IdOutOfRange { id: u64, count: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("lambda * batch_size = {0} is not a positive whole number")]
    NonIntegralWindow(f64),

    #[error("training split has {have} items but batch size is {need}")]
    TrainTooSmall { have: usize, need: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("code width mismatch: {left} vs {right} bits")]
    WidthMismatch { left: usize, right: usize },

    #[error("duplicate id {0} in code index")]
    DuplicateId(u64),

    #[error("relevance list holds {found} relevant items but {expected} were declared")]
    RelevantCountMismatch { expected: usize, found: usize },

    #[error("no query has a relevant item in the retrieval set")]
    ZeroQueries,
}
