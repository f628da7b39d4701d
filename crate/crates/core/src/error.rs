use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("csv row {row}, column `{column}`: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid design: {0}")]
    Validation(String),

    #[error("outcome index {index} out of range (K = {count})")]
    OutcomeIndex { index: usize, count: usize },

    #[error("outcome {outcome} is not binary; Mantel-Haenszel scores need a 0/1 column")]
    NotBinary { outcome: usize },

    #[error("outcome {outcome} has zero within-stratum spread; the Huber scale is zero")]
    DegenerateScale { outcome: usize },

    #[error("outcome {outcome} has constant scores in every stratum; the deviate is undefined")]
    DegenerateOutcome { outcome: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{what} has size {size}, above the limit {limit}; {hint}")]
    Capacity {
        what: &'static str,
        size: u128,
        limit: u128,
        hint: &'static str,
    },

    #[error(
        "minimax solver did not converge after {iterations} Newton steps; value in [{lower}, {upper}]{context}"
    )]
    NonConvergence {
        lower: f64,
        upper: f64,
        iterations: usize,
        context: String,
    },

    #[error("internal consistency check failed: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach branch-and-bound context to a solver failure.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::NonConvergence {
                lower,
                upper,
                iterations,
                context,
            } => Error::NonConvergence {
                lower,
                upper,
                iterations,
                context: format!("{context} ({})", ctx.into()),
            },
            other => other,
        }
    }
}
