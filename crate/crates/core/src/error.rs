use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("row {row}: cannot parse timestamp `{value}`")]
    BadTimestamp { row: usize, value: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("requested window of {requested} h exceeds the data extent of {available} h")]
    WindowExceedsData { requested: f64, available: f64 },

    #[error("missingness fraction {0} is outside (0, 1)")]
    BadFraction(f64),

    #[error("log already contains {0} events with missing categories")]
    AlreadyMasked(usize),

    #[error("unknown venue index {0}")]
    UnknownVenue(usize),

    #[error("latent event at position {0} has no assigned category")]
    UnresolvedLatent(usize),

    #[error("event at position {0} is not latent")]
    NotLatent(usize),

    #[error("category assignment does not match the log: {0}")]
    AssignmentMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite objective in the {group} parameter group")]
    NonFinite { group: &'static str },

    #[error("supercritical parameters: max row sum of the branching matrix is {0:.4} (must be < 1)")]
    Supercritical(f64),

    #[error("venue set is empty")]
    EmptyVenues,

    #[error("user {0} has no history to anchor a prediction")]
    NoHistory(usize),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// True for failures caused by the numerical state rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Supercritical(_))
    }
}
