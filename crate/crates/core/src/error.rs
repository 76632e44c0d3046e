use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("internal consistency violated: {0}")]
    Inconsistent(String),

    #[error("enumeration of {size} joint assignments exceeds the limit of {limit}")]
    TooLarge { size: f64, limit: u64 },

    #[error("unknown code {code:?}; nearest vocabulary entries: {}", nearest.join(", "))]
    UnknownCode { code: String, nearest: Vec<String> },

    #[error("model has no topic-code counts; posterior ranking needs them")]
    MissingStatistics,

    #[error("chain failed at K = {k}, seed = {seed}: {source}")]
    Chain {
        k: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
