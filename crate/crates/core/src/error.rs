use std::path::PathBuf;

use thiserror::Error;

/// One offending configuration key and what is wrong with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("root finder failed: {0}")]
    Solver(String),

    #[error("modes are degenerate (n_eff difference {0:e}); beat length is infinite")]
    Degenerate(f64),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("grid too coarse: {0}")]
    Resolution(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("time window too small: {0}")]
    Window(String),

    #[error("measurement set is not informationally complete (rank {rank} < {needed})")]
    RankDeficient { rank: usize, needed: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid configuration:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(key: &str, message: impl Into<String>) -> Self {
        Error::Config(vec![ConfigIssue { key: key.to_string(), message: message.into() }])
    }

    /// Process exit code for the command-line front end: 2 configuration,
    /// 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
