use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent configuration; `line` is 1-based, 0 when
    /// the problem is not tied to a line (e.g. a missing key).
    #[error("{}", fmt_config(.line, .message))]
    Config { line: usize, message: String },

    /// Training or evaluation produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid file {}: {message}", .path.display())]
    Format { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn fmt_config(line: &usize, message: &str) -> String {
    if *line == 0 {
        format!("config error: {message}")
    } else {
        format!("config error at line {line}: {message}")
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config { line: 0, message: message.into() }
    }

    pub fn at_line(line: usize, message: impl Into<String>) -> Self {
        CliError::Config { line, message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 configuration, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Io { .. } | CliError::Format { .. } | CliError::Json(_) => 4,
        }
    }

    /// Maps a library error raised while working on `path`.
    pub fn from_core(err: sidda_core::Error, path: Option<&std::path::Path>) -> Self {
        use sidda_core::Error as E;
        let at = |p: Option<&std::path::Path>| p.map(|p| p.to_path_buf()).unwrap_or_default();
        match err {
            E::Config(m) | E::Shape(m) => CliError::config(m),
            e @ E::Disconnected { .. } => CliError::config(e.to_string()),
            e @ (E::NonFinite { .. } | E::Numeric(_) | E::State(_)) => CliError::Numeric(e.to_string()),
            e @ E::Format { .. } => CliError::Format { path: at(path), message: e.to_string() },
            E::Io(source) => CliError::Io { path: at(path), source },
        }
    }
}

impl From<sidda_core::Error> for CliError {
    fn from(err: sidda_core::Error) -> Self {
        CliError::from_core(err, None)
    }
}
