use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Incompatible(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        source: wiener_chaos::Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable category printed as `error[<category>]`.
    pub fn category(&self) -> &'static str {
        use wiener_chaos::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Incompatible(_) => "incompatible",
            CliError::Core { source, .. } => match source {
                E::Io(_) => "io",
                E::Format { .. } => "format",
                E::Numerical(_) => "numerical",
                _ => "invalid",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "usage" => 2,
            "config" => 3,
            "io" => 4,
            "format" => 5,
            "incompatible" => 6,
            "numerical" => 7,
            _ => 8,
        }
    }

    /// The single line written to stderr on failure.
    pub fn report(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {}", self.category(), msg)
    }
}

/// Attaches context to library errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, wiener_chaos::Error> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}
