use thiserror::Error;

pub type Result<T> = std::result::Result<T, PlexError>;

#[derive(Debug, Error)]
pub enum PlexError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate vector (norm below {threshold:e}) in {context}")]
    DegenerateVector {
        context: &'static str,
        threshold: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("budget exceeded: {words} words exceeds the limit of {limit} for {what}")]
    Budget {
        what: &'static str,
        words: usize,
        limit: usize,
    },

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("record {id}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("parameter file: {0}")]
    Format(String),

    #[error("parameter file version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PlexError {
    pub(crate) fn shape(context: &'static str, expected: usize, found: usize) -> Self {
        PlexError::ShapeMismatch {
            context,
            expected,
            found,
        }
    }

    /// True for failures caused by numeric blow-up rather than bad data or usage.
    pub fn is_numeric(&self) -> bool {
        matches!(self, PlexError::Divergence { .. } | PlexError::NonFinite(_))
    }
}
