use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the admissible domain of a specific observation.
    #[error("observation {index}: {reason}")]
    ObservationDomain { index: usize, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{matrix} is rank deficient at column {column}")]
    RankDeficient { matrix: &'static str, column: usize },

    #[error("IRLS did not converge after {iterations} iterations (last deviance {deviance})")]
    Convergence { iterations: usize, deviance: f64 },

    #[error("likelihood ratio {value} is negative: alternative does not nest the null")]
    NestingViolation { value: f64 },

    #[error("model {model}: {source}")]
    ModelFit {
        model: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("bootstrap failed: {failures} of {replicates} replicates could not be evaluated")]
    Bootstrap { failures: usize, replicates: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_model(self, model: usize) -> Self {
        Error::ModelFit {
            model,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_replicate(self, index: usize) -> Self {
        Error::Replicate {
            index,
            source: Box::new(self),
        }
    }
}
