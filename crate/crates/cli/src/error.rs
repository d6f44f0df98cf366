use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    /// A deterministic inequality or equivalence failed.
    #[error("property failure: {0}")]
    Property(String),

    #[error("all {0} runs diverged")]
    AllDiverged(usize),

    #[error(transparent)]
    Core(#[from] gradorder_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(gradorder_core::Error::Config(_)) => 2,
            CliError::Property(_) => 3,
            CliError::AllDiverged(_) => 4,
            _ => 1,
        }
    }
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &std::path::Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(gradorder_core::Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::Property("x".into()).exit_code(), 3);
        assert_eq!(CliError::AllDiverged(3).exit_code(), 4);
        assert_eq!(CliError::Core(gradorder_core::Error::OddLength(3)).exit_code(), 1);
    }
}
