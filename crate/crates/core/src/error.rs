use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BanditError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("coordinate-wise perturbation needs at least 2 past actions, have {0}")]
    InsufficientHistory(usize),

    #[error("denominator is zero: {0}")]
    DegenerateDenominator(&'static str),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("trial aborted at round {round}: {source}")]
    Aborted { round: usize, source: Box<BanditError> },
}

pub type Result<T> = std::result::Result<T, BanditError>;

pub(crate) fn shape_err(what: &'static str, expected: impl ToString, found: impl ToString) -> BanditError {
    BanditError::Shape {
        what,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
