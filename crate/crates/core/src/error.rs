use thiserror::Error;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("point outside chart: {0}")]
    OutsideChart(String),
    #[error("mesh generation failed: {0}")]
    Mesh(String),
    #[error("linear solver failure: {0}")]
    Solver(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("regime violation: {0}")]
    Regime(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by the user's input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::Parse(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
