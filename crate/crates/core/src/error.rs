use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate vector: L2 norm {norm:e} is below {eps:e}")]
    DegenerateVector { norm: f64, eps: f64 },

    #[error("non-finite component at index {0}")]
    NonFinite(usize),

    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),

    #[error("group {index} ({name}) has no samples")]
    MissingGroup { index: usize, name: String },

    #[error("model is in {actual} space, expected {expected} space")]
    WrongSpace {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid model set: {0}")]
    InvalidModels(String),

    #[error("quota unreachable for group {group}: {accepted} accepted after {attempts} attempts")]
    QuotaUnreachable {
        group: String,
        accepted: usize,
        attempts: usize,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid value {value:?} for {attribute}; allowed: {allowed:?}")]
    InvalidValue {
        attribute: String,
        value: String,
        allowed: Vec<String>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: parse error: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("{path}:{line}: schema error: {reason}")]
    Schema { path: PathBuf, line: usize, reason: String },

    #[error("transport error (retryable) after {attempts} attempt(s): {reason}")]
    Transport { attempts: u32, reason: String },

    #[error("protocol error{}: {reason}", match .index { Some(i) => format!(" at item {i}"), None => String::new() })]
    Protocol { index: Option<usize>, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::QuotaUnreachable { .. } => 3,
            Error::Io(_)
            | Error::Json(_)
            | Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Transport { .. }
            | Error::Protocol { .. } => 4,
            _ => 1,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}

/// Maps an I/O error to one that names the file involved.
pub(crate) fn io_at(path: &std::path::Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
