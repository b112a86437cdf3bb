use cloudburst_core::evaluation::run::RunError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    ConfigSyntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: invalid config: {message}")]
    ConfigInvalid { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("empty batch: --events must be at least 1")]
    EmptyBatch,
    #[error("unknown component {0:?} (expected initiation, downscaling, learning or all)")]
    Component(String),
    #[error("{0}")]
    Artifact(String),
    #[error(transparent)]
    Run(#[from] RunError),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}
