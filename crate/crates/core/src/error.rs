use std::io;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants map onto the CLI exit-code contract through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("empty bag: {0}")]
    EmptyBag(String),

    #[error("label {target} in row {row} is outside [0, {classes})")]
    Label {
        row: usize,
        target: i64,
        classes: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("seed alignment error, missing (cell, seed) pairs: {}", .0.join("; "))]
    Alignment(Vec<String>),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("pool-size constraint: {0}")]
    PoolSize(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape { op, lhs, rhs }
    }

    /// 0 ok, 2 io, 3 config/data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::Csv(e) if e.is_io_error() => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}
