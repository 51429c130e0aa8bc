use thiserror::Error;

/// Errors raised by the collocation library.
#[derive(Debug, Error)]
pub enum Error {
    /// An internal root finder or fixed-point loop failed to converge.
    /// This points at a bug rather than bad input.
    #[error("{what} did not converge after {iterations} iterations")]
    IterationFailure {
        what: &'static str,
        iterations: usize,
    },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    /// A user callback produced a non-finite value.
    #[error("evaluation failed: {0}")]
    EvaluationFailure(String),

    /// The Newton iteration on the collocated state equations did not
    /// reduce the dynamics defect below the requested tolerance.
    #[error("state Newton iteration did not converge after {iterations} iterations (defect {defect:e})")]
    NewtonDivergence { iterations: usize, defect: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A user-supplied derivative disagrees with central differences.
    #[error("derivative audit failed for {what}: relative error {rel_error:e}")]
    DerivativeMismatch { what: String, rel_error: f64 },

    #[error("rate fit needs at least {needed} points after discarding the smallest N, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
