use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum WanError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {context} (layer {layer:?})")]
    NonFinite {
        context: String,
        layer: Option<usize>,
    },

    #[error("logarithm of non-positive value {value:e} in term `{term}`")]
    LogDomain { term: String, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate test function: estimated squared L2 norm is {0:e}")]
    DegenerateTestFunction(f64),

    #[error("degenerate reference: exact solution has zero norm over the evaluation set")]
    DegenerateReference,

    #[error("training aborted at iteration {iteration}: {source}")]
    TrainingAborted {
        iteration: usize,
        #[source]
        source: Box<WanError>,
    },

    #[error("time step {step}: {source}")]
    TimeStep {
        step: usize,
        #[source]
        source: Box<WanError>,
    },

    #[error("unknown experiment `{id}`; valid ids: {valid}")]
    UnknownExperiment { id: String, valid: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, WanError>;

impl WanError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        WanError::Config(msg.into())
    }

    pub(crate) fn non_finite(context: impl Into<String>, layer: Option<usize>) -> Self {
        WanError::NonFinite {
            context: context.into(),
            layer,
        }
    }
}
