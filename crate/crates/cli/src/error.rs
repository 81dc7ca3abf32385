use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error(transparent)]
    Core(#[from] qtps::Error),

    #[error("io: {0}")]
    Io(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Machine-readable error record written on failure.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl CliError {
    pub fn record(&self) -> ErrorRecord {
        let kind = match self {
            CliError::Config { .. } => "config",
            CliError::Core(_) => "core",
            CliError::Io(_) => "io",
            CliError::Unsupported(_) => "unsupported",
        };
        let line = match self {
            CliError::Config { line, .. } => *line,
            _ => None,
        };
        ErrorRecord { kind, message: self.to_string(), line }
    }
}
