use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("region index {index} out of range for {count} regions")]
    RegionOutOfRange { index: usize, count: usize },

    #[error("category id {id} out of range for {count} categories")]
    CategoryOutOfRange { id: usize, count: usize },

    #[error("no position for location id `{0}`")]
    MissingPosition(String),

    #[error("gravity model not identifiable: column `{column}` is collinear with the preceding regressors")]
    NotIdentifiable { column: &'static str },

    #[error("gravity model needs at least {needed} region pairs with positive flow, found {found}")]
    TooFewPairs { needed: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dims(what: &str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            what: what.to_string(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NonFiniteLoss { .. } | Error::NotIdentifiable { .. } | Error::Domain(_)
        )
    }
}
