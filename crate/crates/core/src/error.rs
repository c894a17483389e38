use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("dyadic level {level} exceeds the supported maximum {max}")]
    LevelTooLarge { level: u32, max: u32 },

    #[error("index {index} is out of range for level {level}")]
    IndexOutOfRange { level: u32, index: String },

    #[error("point {0} lies on a half-boundary of the interval; Haar value is ambiguous")]
    AmbiguousPoint(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("resolution {got} is too coarse; at least {needed} is required")]
    ResolutionTooCoarse { needed: u32, got: u32 },

    #[error("size guard exceeded: {what} needs about 2^{log2_size} steps (limit 2^{limit})")]
    GuardExceeded { what: String, log2_size: u32, limit: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sign table does not cover shape {0}")]
    MissingShape(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    /// True for refusals caused by a size guard rather than bad input.
    pub fn is_guard(&self) -> bool {
        matches!(self, Error::GuardExceeded { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
