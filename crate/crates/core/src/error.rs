use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("IDX format error in {path}: at byte offset {offset}, expected {expected}, found {found}")]
    IdxFormat {
        path: PathBuf,
        offset: usize,
        expected: String,
        found: String,
    },

    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("co-located transceivers (distance 0)")]
    ZeroDistance,

    #[error("non-finite training loss at iteration {iteration}")]
    TrainingDiverged { iteration: usize },

    #[error("graph loss diverged at epoch {epoch} (loss {loss:e}); try a smaller gae_learning_rate")]
    GaeDiverged { epoch: usize, loss: f64 },

    #[error("non-finite hidden state at layer {layer}")]
    NonFiniteHidden { layer: usize },

    #[error("need at least {needed} overheard models to build a correlation graph, got {got}")]
    TooFewOverheard { needed: usize, got: usize },

    #[error("stealth radius {d_thresh} is infeasible: smallest enclosing radius of the benign models is {radius}")]
    ThresholdInfeasible { d_thresh: f64, radius: f64 },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("round {round}, stage {stage}: {source}")]
    Stage {
        round: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
