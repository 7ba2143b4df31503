//! Crate-wide error type.
//!
//! Every variant maps to a distinct process exit code so the CLI can report
//! failures by category (see [`Error::exit_code`]).

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Zero-norm or otherwise degenerate numerical input.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Non-finite values encountered during a computation.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A config file line could not be parsed or validated.
    #[error("config error at line {line} (key `{key}`): {msg}")]
    ConfigKey {
        key: String,
        line: usize,
        msg: String,
    },

    #[error("unknown class id {0}")]
    Vocabulary(usize),

    #[error("candidate set error: {0}")]
    CandidateSet(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    /// Malformed dataset or tensor file; `section` names the offending part.
    #[error("format error in section `{section}`: {msg}")]
    Format { section: String, msg: String },

    /// `b * topK` exceeds the number of base classes.
    #[error(
        "constraint violation: b*topK = {b}*{k} = {} exceeds |C_b| = {n_base}; \
         b*topK must not exceed the number of base classes",
        b * k
    )]
    Constraint { b: usize, k: usize, n_base: usize },

    #[error("state error: {0}")]
    State(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("incompatible token universe: {0}")]
    Compatibility(String),

    /// Internal invariant broken; indicates a bug rather than bad input.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigKey { .. } => 3,
            Error::Dataset(_) => 4,
            Error::Format { .. } => 5,
            Error::Io { .. } => 6,
            Error::Constraint { .. } => 7,
            Error::Vocabulary(_) | Error::CandidateSet(_) | Error::Compatibility(_) => 8,
            Error::Degenerate(_) | Error::Numerical(_) | Error::Shape(_) => 9,
            Error::State(_) | Error::Argument(_) => 10,
            Error::Invariant(_) => 11,
        }
    }
}
