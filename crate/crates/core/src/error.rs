use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("target tensor has (near) zero energy, relative error is undefined")]
    DegenerateTarget,

    #[error("signal has zero power, cannot scale noise to an SNR")]
    DegenerateSignal,

    #[error("trajectory of length {len} is too short for horizon {horizon}")]
    TooShort { len: usize, horizon: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("predictor produced a non-finite value")]
    NonFinite,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("malformed data: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}
