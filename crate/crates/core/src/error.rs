use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("vocabulary is empty")]
    EmptyVocab,

    #[error("special token absent: {0}")]
    MissingSpecialToken(String),

    #[error("line {line}: duplicate token {token:?} (first seen on line {first})")]
    DuplicateToken {
        token: String,
        line: usize,
        first: usize,
    },

    #[error("line {line}: empty token")]
    EmptyToken { line: usize },

    #[error("cannot choose k from an empty word list")]
    EmptyWordList,

    #[error("coverage must lie in (0, 1], got {0}")]
    InvalidCoverage(f64),

    #[error("k must be at least 1")]
    InvalidK,

    #[error("no usable words for language {0:?}")]
    EmptyLanguage(String),

    #[error("language {0:?} is not in the inventory")]
    UnknownLanguage(String),

    #[error("target word {word:?} is not indexed for language {language:?}")]
    ExcludedTarget { language: String, word: String },

    #[error("target id {target} out of range for {size} candidates")]
    TargetOutOfRange { target: usize, size: usize },

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed score matrix: {0}")]
    ScoreFile(String),

    #[error("corpus has no valid entries ({rejected} lines rejected)")]
    EmptyCorpus { rejected: usize },

    #[error("{0}")]
    Split(String),

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64 },

    #[error("line {line}: {reason}")]
    Lexicon { line: usize, reason: String },

    #[error("lexicon has no entries")]
    EmptyLexicon,

    #[error("inconsistent generator spec: {0}")]
    SynthSpec(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unsupported language pair {definition} -> {target}")]
    UnsupportedPair { definition: String, target: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
