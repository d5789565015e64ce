//! Error type shared by every module, with a stable mapping to process exit
//! codes: input problems exit 2, domain failures exit 1.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition (non-finite angle,
    /// out-of-range guide index, dimension mismatch, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Not enough data points to run a fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A fit ran but produced no admissible solution.
    #[error("fit failure: {0}")]
    FitFailure(String),

    /// Inverse design has no physical solution for the requested target.
    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),

    /// Input is degenerate (e.g. an all-zero field vector).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// One or more records failed validation; each string names a record.
    #[error("validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 0 is success, 1 a domain failure (a well-formed
    /// request with no admissible answer), 2 an input error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InsufficientData(_)
            | Error::FitFailure(_)
            | Error::InfeasibleDesign(_)
            | Error::DegenerateInput(_) => 1,
            Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Io { .. }
            | Error::Json(_) => 2,
        }
    }
}
