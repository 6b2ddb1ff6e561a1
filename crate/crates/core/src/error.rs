use thiserror::Error;

/// Errors produced by the estimation, selection and inference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("column {0} has zero median absolute deviation; drop it before fitting")]
    DegenerateColumn(usize),
    #[error("response has zero median absolute deviation")]
    DegenerateResponse,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("alpha must be in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("operation requires alpha > 0")]
    AlphaZero,
    #[error("penalty derivative requested at non-positive argument {0}")]
    NonpositiveArgument(f64),
    #[error("surrogate Hessian stayed indefinite after maximal jitter")]
    IndefiniteSurrogate,
    #[error("inner coordinate descent hit {0} sweeps without converging")]
    InnerNoConvergence(usize),
    #[error("scale objective has no interior minimum after bracket expansion")]
    BracketFailure,
    #[error("outer iterations exhausted after {0} iterations")]
    NoConvergence(usize),
    #[error("design matrix is singular or rank deficient")]
    SingularDesign,
    #[error("curvature matrix S is numerically singular (condition {0:e})")]
    SingularS(f64),
    #[error("active-set Gram matrix is singular")]
    SingularGram,
    #[error("influence matrix is singular")]
    SingularPsi,
    #[error("every test response is zero")]
    AllResponsesZero,
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("io error: {0}")]
    Io(String),
    #[error("every candidate failed; last error: {0}")]
    AllFailed(String),
    #[error("{failed} of {total} replicates failed (limit 5%); first error: {first}")]
    StudyFailed {
        failed: usize,
        total: usize,
        first: String,
    },
}

impl Error {
    /// Short variant name, used by the CLI on stderr.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DegenerateColumn(_) => "DegenerateColumn",
            Error::DegenerateResponse => "DegenerateResponse",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::AlphaOutOfRange(_) => "AlphaOutOfRange",
            Error::AlphaZero => "AlphaZero",
            Error::NonpositiveArgument(_) => "NonpositiveArgument",
            Error::IndefiniteSurrogate => "IndefiniteSurrogate",
            Error::InnerNoConvergence(_) => "InnerNoConvergence",
            Error::BracketFailure => "BracketFailure",
            Error::NoConvergence(_) => "NoConvergence",
            Error::SingularDesign => "SingularDesign",
            Error::SingularS(_) => "SingularS",
            Error::SingularGram => "SingularGram",
            Error::SingularPsi => "SingularPsi",
            Error::AllResponsesZero => "AllResponsesZero",
            Error::Parse { .. } => "ParseError",
            Error::Io(_) => "IoError",
            Error::AllFailed(_) => "AllFailed",
            Error::StudyFailed { .. } => "StudyFailed",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
