use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("downsample ratio is not an integer: {from} -> {to}")]
    NonIntegerRatio { from: String, to: String },

    #[error("occlusion ratio undefined: no mask has any set cell")]
    UndefinedRatio,

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("the background layer cannot be removed")]
    BackgroundLayer,

    #[error("empty prompt")]
    EmptyPrompt,

    #[error("empty mask: an edit needs at least one set cell")]
    EmptyMask,

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("numeric failure in block {block}: {what}")]
    Numeric { block: usize, what: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("ratio r must lie in [0, 1), got {0}")]
    InvalidRatio(f64),

    #[error("scenario {index}: constraints unsatisfiable after {attempts} attempts")]
    GenerationFailed { index: usize, attempts: usize },

    #[error("invalid mask encoding: {0}")]
    InvalidEncoding(String),

    #[error("session file: {0}")]
    Persist(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
