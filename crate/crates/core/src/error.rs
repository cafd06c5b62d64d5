use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("out of bounds: {0}")]
    Bounds(String),
    #[error("row {0} sits at a bank edge and has no double-sided aggressors")]
    Edge(u32),
    #[error("value out of model range: {0}")]
    Range(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("not RowHammerable: no flips at any tested hammer count")]
    NotRowHammerable,
    #[error("missing {what}; generate it with `dramlab {subcommand}`")]
    MissingProfile { what: String, subcommand: String },
    #[error("trace parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("profile format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("geometry hash mismatch: file {found}, expected {expected}")]
    GeometryMismatch { found: String, expected: String },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
