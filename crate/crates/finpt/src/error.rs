use std::path::PathBuf;

/// Crate-wide error type. Variants carry enough context to be printed
/// verbatim as a CLI diagnostic.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("load error: {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dataset has {0} rows, need at least 10 to split")]
    TooFewRows(usize),

    #[error("profile generation failed for row {row_id}: {reason}")]
    Generation { row_id: usize, reason: String },

    #[error("profile cache: {0}")]
    Cache(String),

    #[error("tokenizer: {0}")]
    Tokenize(String),

    #[error("backbone: {0}")]
    Backbone(String),

    #[error("loss: {0}")]
    Loss(String),

    #[error("trainer: {0}")]
    Train(String),

    #[error("eval: {0}")]
    Eval(String),

    #[error("prompt: {0}")]
    Prompt(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Http(#[from] reqwest::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
