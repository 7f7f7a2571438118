use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("collinear design: column `{column}` is a linear combination of {depends_on:?}")]
    Collinear {
        column: String,
        depends_on: Vec<String>,
    },

    #[error("lasso did not converge after {sweeps} sweeps (duality gap {gap:.3e})")]
    NoConvergence { sweeps: usize, gap: f64 },

    #[error("missing artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("replay stream exhausted in bin {bin} after {events} events: {detail}")]
    StreamExhausted {
        bin: usize,
        events: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
