//! Failure kinds and their exit codes.

use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_ALARM: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{context}: {message}")]
    Schema { context: String, message: String },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Core(#[from] eigencc::Error),

    #[error("replay mismatch: {0}")]
    Mismatch(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    row: Option<usize>,
}

impl CliError {
    pub fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_string(), source }
    }

    pub fn schema(context: impl Into<String>, message: impl std::fmt::Display) -> Self {
        CliError::Schema { context: context.into(), message: message.to_string() }
    }

    /// Degenerate data exits 2; everything else is an I/O or schema
    /// failure and exits 1.
    pub fn exit_code(&self) -> i32 {
        use eigencc::Error as E;
        match self {
            CliError::Core(E::DegenerateNoise | E::DegenerateProfile | E::InsufficientProfiles { .. }) => {
                EXIT_DEGENERATE
            }
            _ => EXIT_FAILURE,
        }
    }

    fn kind(&self) -> &'static str {
        use eigencc::Error as E;
        match self {
            CliError::Io { .. } => "io",
            CliError::Schema { .. } => "schema",
            CliError::Row { .. } => "malformed_row",
            CliError::Usage(_) => "usage",
            CliError::Mismatch(_) => "replay_mismatch",
            CliError::Core(e) => match e {
                E::DegenerateNoise | E::DegenerateProfile => "degenerate_data",
                E::InsufficientProfiles { .. } => "insufficient_profiles",
                E::DimensionMismatch { .. } => "dimension_mismatch",
                E::Infeasible(_) => "infeasible",
                _ => "invalid_parameter",
            },
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let report = ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
            row: match self {
                CliError::Row { row, .. } => Some(*row),
                _ => None,
            },
        };
        serde_json::to_string(&report).expect("error report serializes")
    }
}
