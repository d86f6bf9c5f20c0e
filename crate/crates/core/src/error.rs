use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("block size {block_size} does not divide generation length {gen_len}")]
    NonDivisible { gen_len: usize, block_size: usize },
    #[error("generation length and block size must both be at least 1")]
    ZeroLength,
    #[error("prompt must contain at least one token")]
    EmptyPrompt,
    #[error("block {block} out of range (sequence has {num_blocks} blocks)")]
    BlockOutOfRange { block: usize, num_blocks: usize },
    #[error("position {position} out of range (sequence length {len})")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("generation slot {index} is already committed")]
    SlotAlreadyCommitted { index: usize },
    #[error("token id {token} outside vocabulary of size {vocab}")]
    VocabMismatch { token: u32, vocab: usize },

    #[error("query position {0} is not present in the view")]
    QueryNotInView(usize),
    #[error("malformed oracle script: {0}")]
    MalformedScript(String),
    #[error("embedding dimension {0} must be even")]
    OddEmbedDim(usize),
    #[error("invalid denoiser parameter: {0}")]
    InvalidDenoiser(String),

    #[error("index set does not match the sequence: {0}")]
    InconsistentIndexSet(String),
    #[error("prefix cache built for block {cached} cannot serve earlier block {requested}")]
    BlockRegression { cached: usize, requested: usize },

    #[error("parameter `{name}` = {value} out of range")]
    ParamOutOfRange { name: &'static str, value: f64 },
    #[error("selection requires at least one prediction")]
    EmptyPredictions,
    #[error("block {0} has no masked slots left")]
    BlockAlreadyDone(usize),
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("unknown scheduler kind `{0}`")]
    UnknownKind(String),

    #[error("invalid forward counts: {queries} queries, {keys} keys")]
    InvalidCounts { queries: usize, keys: usize },
    #[error("run produced no forward calls")]
    EmptyRun,
    #[error("baseline throughput proxy is zero")]
    DivideByZero,
    #[error("trace contains no step records")]
    EmptyTrace,
    #[error("trace carries no attention data")]
    NoAttentionData,
    #[error("bundles are not comparable: {0}")]
    IncomparableBundles(String),
    #[error("bundle {0} contains no trace files")]
    EmptyBundle(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
