use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value could not be parsed or failed validation.
    #[error("config error{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The per-pipe velocity iteration hit its iteration cap.
    #[error(
        "velocity iteration did not converge{}{} after {iterations} iterations (last iterates {previous} -> {latest})",
        pipe.map(|p| format!(" on pipe {p}")).unwrap_or_default(),
        time.map(|t| format!(" at t = {t} s")).unwrap_or_default()
    )]
    NonConvergence {
        pipe: Option<usize>,
        time: Option<f64>,
        iterations: usize,
        previous: f64,
        latest: f64,
    },

    /// A loss or residual evaluated to NaN or infinity during training.
    #[error("non-finite {what} at epoch {epoch}{}", point.map(|k| format!(", collocation index {k}")).unwrap_or_default())]
    NonFinite {
        what: String,
        epoch: usize,
        point: Option<usize>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
