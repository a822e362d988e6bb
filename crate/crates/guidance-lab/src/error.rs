use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("component index {index} out of range for {count} components")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("embedding length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("alpha_bar {0} outside (0, 1]")]
    AlphaBarOutOfRange(f64),

    #[error("conditional weight vector is all zero for concept '{0}'")]
    EmptyConditional(String),

    #[error("sample count must be positive")]
    EmptySampleRequest,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("shape mismatch in network: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: u64 },

    #[error("non-finite state at step {step} while sampling (term scales {scales:?})")]
    NonFiniteSample { step: usize, scales: Vec<f64> },

    #[error("invalid inhibition spec: {0}")]
    InvalidInhibition(String),

    #[error("normal-equation matrix is singular; a positive ridge is required")]
    SingularEdit,

    #[error("invalid attack spec: {0}")]
    InvalidAttack(String),

    #[error("analysis input invalid: {0}")]
    InvalidAnalysis(String),

    #[error("config error: {path}: {message}")]
    Config { path: String, message: String },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn stage(stage: &str, source: Error) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(source),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
