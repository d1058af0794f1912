use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the training and ensembling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vote vector has no in-category votes")]
    ZeroVotes,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing field `{field}` at line {line}")]
    MissingField { line: usize, field: String },

    #[error("feature files missing for utterances: {}", ids.join(", "))]
    MissingFeatureFile { ids: Vec<String> },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("malformed feature file {path}: {message}")]
    FeatureFormat { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch row {row} of modality `{modality}` has no valid time steps")]
    AllMaskedRow { modality: String, row: usize },

    #[error("modality `{0}` missing from batch or corpus")]
    ModalityMissing(String),

    #[error("class `{0}` has no training samples")]
    MissingClass(&'static str),

    #[error("non-finite loss at epoch {epoch}, step {step}\n{dump}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        dump: String,
    },

    #[error("expected a stage {expected} checkpoint, found stage {found}")]
    StageMismatch { expected: u8, found: u8 },

    #[error("unknown utterance id `{0}`")]
    UnknownId(String),

    #[error("member `{member}` does not cover utterance `{id}`")]
    CoverageMismatch { member: String, id: String },

    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed posterior file: {0}")]
    PosteriorFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
