use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter space: {0}")]
    Space(String),

    #[error("log density is not finite at coordinate {coordinate} (perturbed point)")]
    GradientCheck { coordinate: usize },

    #[error("log density is not finite at the initial point")]
    InitialPoint,

    #[error("cannot adapt step size: every burn-in proposal diverged")]
    CannotAdapt,

    #[error("degenerate support: every hyperparameter sample has zero conditional density")]
    DegenerateSupport,

    #[error("weight optimization failed: {0}")]
    Optimization(String),

    #[error("sample set: {0}")]
    SampleSet(String),

    #[error("model mismatch: stump is for `{stump}`, model is `{model}`")]
    ModelMismatch { stump: String, model: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("too few draws: need at least {needed}, have {have}")]
    TooFewDraws { needed: usize, have: usize },

    #[error("empty sample")]
    EmptySample,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
