use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vector")]
    EmptyVector,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("zero-norm row {row} in {which}")]
    ZeroNorm { which: &'static str, row: usize },

    #[error("non-finite loss: {0}")]
    NonFinite(f64),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("vocab_size {requested} too small: minimum is {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },

    #[error("token id {0} out of range")]
    TokenOutOfRange(u32),

    #[error("all positions are [PAD]")]
    AllPad,

    #[error("adapter already present")]
    AdapterPresent,

    #[error("no adapter attached")]
    NoAdapter,

    #[error("no anchors: source and target vocabularies share no tokens")]
    NoAnchors,

    #[error("missing auxiliary vector for token {0:?}")]
    MissingAux(String),

    #[error("unknown concept {0}")]
    UnknownConcept(usize),

    #[error("concept inventory too small: {0}")]
    InventoryTooSmall(String),

    #[error("insufficient corpus: {0}")]
    InsufficientCorpus(String),

    #[error("nothing to train: mask_prob must be > 0")]
    NothingToTrain,

    #[error("no negatives: MNRL needs at least two pairs or a hard negative")]
    NoNegatives,

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("missing language model for {0:?}")]
    MissingLanguage(String),

    #[error("base model is not frozen")]
    Unfrozen,

    #[error("phase order violation: {0}")]
    PhaseOrder(String),

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported version {version} in {path}")]
    BadVersion { path: PathBuf, version: u32 },

    #[error("truncated weight file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("{phase} failed for seed {seed}: {source}")]
    Phase {
        phase: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}
