use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("order {order} needs at least {required} samples per period, got {samples}")]
    Nyquist {
        order: usize,
        samples: usize,
        required: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular system (condition estimate {condition:.3e}): {context}")]
    Singular { condition: f64, context: String },

    #[error("current {value} A outside the model range [{lower}, {upper}] A")]
    OutOfRange { value: f64, lower: f64, upper: f64 },

    #[error("target flux {target} Vs outside the branch range [{lower}, {upper}] Vs (saturation bound)")]
    Saturation { target: f64, lower: f64, upper: f64 },

    #[error("invalid base point, condition {condition}: {detail}")]
    InvalidBase { condition: char, detail: String },

    #[error("no convergence after {iterations} iterations; residual history {history:?}")]
    NoConvergence { iterations: usize, history: Vec<f64> },

    #[error("rank-deficient constrained least-squares system: {detail}")]
    RankDeficient { detail: String },

    #[error("infeasible splitting: {detail}")]
    Infeasible { detail: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
