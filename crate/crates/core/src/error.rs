use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame has {got_w}x{got_h} pixels ({got_len} bytes), expected 640x480 RGB")]
    FrameShape {
        got_w: usize,
        got_h: usize,
        got_len: usize,
    },

    #[error("tensor shape {got:?}, expected [3, 224, 224]")]
    TensorShape { got: Vec<usize> },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("CSV schema mismatch: missing {missing:?}, unexpected {unexpected:?}")]
    Schema {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("CSV parse error at row {row}, column `{column}`: {message}")]
    CsvValue {
        row: usize,
        column: String,
        message: String,
    },

    #[error("pre-trial check failed: {0}")]
    PreTrial(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("png: {0}")]
    Png(String),

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
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
