use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("point lies outside the configured window")]
    OutsideWindow,
    #[error("window exhausted: {0}")]
    WindowExhausted(String),
    #[error("cylinder is not admissible")]
    NotAdmissible,
    #[error("operation requires a large admissible cylinder")]
    NotLargeAdmissible,
    #[error("base sets cannot be compared exactly")]
    IncomparableBases,
    #[error("measure of this base set is not computable: {0}")]
    Unmeasurable(String),
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    #[error("point is not covered by the family")]
    Uncovered,
}

pub type Result<T> = std::result::Result<T, Error>;
