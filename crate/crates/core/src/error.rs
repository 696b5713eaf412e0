use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bit stream of length {len} is not a multiple of {bits_per_symbol}; pad before modulating")]
    PaddingRequired { len: usize, bits_per_symbol: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("window {window} does not fit a stream of length {len}")]
    InvalidWindow { window: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("correlation matrix is singular; use a positive ridge")]
    Singular,

    #[error("not enough training data: need {needed} symbols, got {got}")]
    InsufficientTraining { needed: usize, got: usize },

    #[error("equalizer diverged at step {step} (|y| = {magnitude:.3e})")]
    Divergence { step: usize, magnitude: f64 },

    #[error("address {address} is outside the tree address space (size {size})")]
    AddressOutOfRange { address: u64, size: u64 },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("missing config key `{key}` in section [{section}]")]
    MissingKey { section: String, key: String },

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("log-scale axis cannot show non-positive value {value} (row {row}, column `{column}`)")]
    NonPositiveLog { row: usize, column: String, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
