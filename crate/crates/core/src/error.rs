use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{truths} real ground-truths cannot be supplied to {codes} control codes")]
    TooManyTruths { truths: usize, codes: usize },

    #[error("infeasible transport problem: {0}")]
    InfeasibleProblem(String),

    #[error("numerical failure in solver: {0}")]
    NumericalFailure(String),

    #[error("oracle input too large: {0}")]
    OracleTooLarge(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("could not find any T/F label in reply {0:?}")]
    UnparseableReply(String),

    #[error("{labels} labels for {candidates} candidates")]
    LabelLengthMismatch { labels: usize, candidates: usize },

    #[error("no embedding for phrase {0:?}")]
    MissingEmbedding(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("streams not aligned at position {position}: {left:?} vs {right:?}")]
    AlignmentError {
        position: usize,
        left: String,
        right: String,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("duplicate instance id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that originate in numerics rather than in the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalFailure(_))
    }
}
