use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: malformed record: {reason} (near `{excerpt}`)")]
    MalformedRecord {
        path: String,
        line: usize,
        reason: String,
        excerpt: String,
    },

    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),

    #[error("duplicate query id `{0}`")]
    DuplicateQueryId(String),

    #[error("{path}:{line}: negative relevance grade {grade}")]
    NegativeGrade { path: String, line: usize, grade: i64 },

    #[error("invalid ranked list for query `{query_id}`: {reason}")]
    InvalidRankedList { query_id: String, reason: String },

    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,

    #[error("no run query has relevance judgments")]
    EmptyIntersection,

    #[error("prompt template is missing placeholder `{0}` or uses it more than once")]
    MissingPlaceholder(&'static str),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("query `{query_id}` cannot form a training list: {reason}")]
    InsufficientJudgments { query_id: String, reason: String },

    #[error("index {index} out of range for list of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite gradient at step {step}; parameter state dumped to {dump}")]
    NonFiniteGradient { step: usize, dump: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the failure came from an unreachable backend, possibly wrapped in a stage.
    pub fn is_backend_unavailable(&self) -> bool {
        match self {
            Error::BackendUnavailable(_) => true,
            Error::Stage { source, .. } => source.is_backend_unavailable(),
            _ => false,
        }
    }
}
