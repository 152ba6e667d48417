use thiserror::Error;

/// Runner failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown preset `{0}`; run `gibbsdiff presets` for the catalog")]
    UnknownPreset(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Module(#[from] gibbsdiff::Error),

    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownPreset(_) => 2,
            _ => 1,
        }
    }

    /// Machine-readable diagnostic for stderr.
    pub fn diagnostic(&self) -> serde_json::Value {
        let kind = match self {
            CliError::UnknownPreset(_) => "unknown_preset",
            CliError::Config(_) => "config",
            CliError::Module(_) => "module",
            CliError::Io(_) => "io",
        };
        serde_json::json!({ "error": kind, "message": self.to_string(), "exit_code": self.exit_code() })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
