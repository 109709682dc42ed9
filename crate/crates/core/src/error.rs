use crate::merge::CompatReport;

/// Errors produced across the merge toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("offset error: {0}")]
    OffsetError(String),

    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error("invalid tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },

    #[error("incompatible checkpoints: {0}")]
    IncompatibleCheckpoints(Box<CompatReport>),

    #[error("integer tensor `{0}` differs between checkpoints (int-tensor policy require-equal)")]
    IntTensorMismatch(String),

    #[error("alpha {0} is outside [0, 1]; pass the extrapolate flag to allow it")]
    AlphaOutOfRange(f64),

    #[error("model list is empty")]
    EmptyModelList,

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("token {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}; learning rate too high?")]
    NonFiniteLoss { epoch: usize, step: u64 },

    #[error("sentence set is empty")]
    EmptySentenceSet,

    #[error("zero vector: {0}")]
    ZeroVector(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("need at least two curve points, got {0}")]
    TooFewPoints(usize),

    #[error("expected exactly 5 models, got {0}")]
    WrongModelCount(usize),

    #[error("gate failed: {0}")]
    GateFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable name of the error kind, for user-facing messages.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::OffsetError(_) => "OffsetError",
            Error::DuplicateName(_) => "DuplicateName",
            Error::UnknownTensor(_) => "UnknownTensor",
            Error::InvalidTensor { .. } => "InvalidTensor",
            Error::IncompatibleCheckpoints(_) => "IncompatibleCheckpoints",
            Error::IntTensorMismatch(_) => "IntTensorMismatch",
            Error::AlphaOutOfRange(_) => "AlphaOutOfRange",
            Error::EmptyModelList => "EmptyModelList",
            Error::InvalidSweep(_) => "InvalidSweep",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::TokenOutOfRange { .. } => "TokenOutOfRange",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::EmptySentenceSet => "EmptySentenceSet",
            Error::ZeroVector(_) => "ZeroVector",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::TooFewPoints(_) => "TooFewPoints",
            Error::WrongModelCount(_) => "WrongModelCount",
            Error::GateFailed(_) => "GateFailed",
            Error::Io(_) => "Io",
        }
    }
}
