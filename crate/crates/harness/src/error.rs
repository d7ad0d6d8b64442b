use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{}", config_message(*line, key, message))]
    Config {
        line: Option<usize>,
        key: String,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] crgan::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Report(String),
    #[error("{failed} of {total} runs failed; first: {first}")]
    Runs { failed: usize, total: usize, first: String },
}

fn config_message(line: Option<usize>, key: &str, message: &str) -> String {
    match line {
        Some(l) => format!("line {l}: `{key}`: {message}"),
        None => format!("`{key}`: {message}"),
    }
}

impl HarnessError {
    pub fn config(line: Option<usize>, key: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            line,
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
