use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("variable {var}: value {value} outside [{lower}, {upper}]")]
    OutOfDomain {
        var: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("sampling failed at variable {var}: conditional marginal has non-positive mass {mass}")]
    SamplingFailure { var: usize, mass: f64 },

    #[error("degenerate sketch at tree node {node}: leading singular value is zero")]
    DegenerateNode { node: usize },

    #[error("degenerate point: normalizer {value} is not positive")]
    DegeneratePoint { value: f64 },

    #[error("simulation diverged in trajectory {trajectory} at step {step}")]
    Diverged { trajectory: usize, step: usize },

    #[error("data quality: {dropped} of {total} samples dropped (limit 1%)")]
    DataQuality { dropped: usize, total: usize },

    #[error("config: {0}")]
    Config(String),

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
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
