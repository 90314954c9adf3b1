use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An experiment configuration value failed validation. `path` is the
    /// dotted key path inside the config tree.
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    /// A controller was handed an observation it cannot consume.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("assay error: {0}")]
    Assay(String),

    #[error("fit diverged at epoch {epoch}: loss {loss:.6e} exceeds {limit:.1e} (step_size {step_size})")]
    FitDiverged {
        epoch: usize,
        loss: f64,
        limit: f64,
        step_size: f64,
    },

    /// The simulation produced a non-finite value.
    #[error("non-finite value in episode {episode} at step {step}: {dump}")]
    NonFinite {
        episode: usize,
        step: usize,
        dump: String,
    },

    #[error("{}", parse_location(file, *line, message))]
    Parse {
        file: PathBuf,
        /// 1-based; 0 when no line applies.
        line: usize,
        message: String,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

fn parse_location(file: &std::path::Path, line: usize, message: &str) -> String {
    match line {
        0 => format!("{}: {message}", file.display()),
        n => format!("{}:{n}: {message}", file.display()),
    }
}
