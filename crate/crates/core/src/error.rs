use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("sentence {sentence_id}: invalid tag sequence at token {position}: {message}")]
    InvalidTags {
        sentence_id: String,
        position: usize,
        message: String,
    },

    #[error("invalid sentence: {0}")]
    InvalidSentence(String),

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("corpus mismatch at sentence {sentence_id}: {message}")]
    CorpusMismatch {
        sentence_id: String,
        message: String,
    },

    #[error("invalid pattern: {0}")]
    Pattern(String),

    #[error("invalid verbalizer: {0}")]
    Verbalizer(String),

    #[error("token index {index} out of range for sentence of {len} tokens")]
    TokenIndex { index: usize, len: usize },

    #[error("candidate not in scorer vocabulary: {0}")]
    Vocabulary(String),

    #[error("no training examples")]
    EmptyTraining,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot reach scorer bridge at {addr}: {source}")]
    Connection {
        addr: String,
        #[source]
        source: io::Error,
    },

    #[error("scorer protocol violation: {0}")]
    Protocol(String),

    #[error("scorer bridge returned {code}: {message}")]
    Remote { code: String, message: String },

    #[error("pattern {pvp}: {source}")]
    Pvp {
        pvp: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
