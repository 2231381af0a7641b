use thiserror::Error;

#[derive(Debug, Error)]
pub enum HedgeError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("negative variance input {0}")]
    NegativeVariance(f64),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("non-finite value in backward roll at step {step}")]
    NonFinite { step: usize },

    #[error("non-finite gradient at parameter {index} (iteration {iteration})")]
    NanGradient { iteration: u64, index: usize },

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged {
        iteration: usize,
        loss: f64,
        loss_trace: Vec<f64>,
    },

    #[error("PDE march unstable at time step {step}: max |f| = {max_abs}")]
    PdeUnstable { step: usize, max_abs: f64 },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<HedgeError>,
    },

    #[error("{0}")]
    Refused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HedgeError {
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        HedgeError::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = HedgeError> = std::result::Result<T, E>;
