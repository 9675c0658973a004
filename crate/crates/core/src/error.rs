use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("parse error: {0}")]
    Parse(String),
    #[error("panel has fewer than 2 usable rows ({rows})")]
    EmptyPanel { rows: usize },
    #[error("non-positive price at row {row}, column {col}")]
    NonPositivePrice { row: usize, col: usize },
    #[error("horizon {horizon} exceeds panel length {rows}")]
    HorizonTooLarge { horizon: usize, rows: usize },
    #[error("need at least {required} rows, got {rows}")]
    TooFewRows { required: usize, rows: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },
    #[error("singular input: {0}")]
    SingularInput(String),
    #[error("zero residual variance for node {node}")]
    ZeroResidualVariance { node: usize },
    #[error("linear program infeasible")]
    Infeasible,
    #[error("simplex stalled after {pivots} pivots")]
    SolverStall { pivots: usize },
    #[error("degenerate spectrum: all eigenvalues equal")]
    DegenerateSpectrum,
    #[error("shrinkage target is not positive definite")]
    DegenerateTarget,
    #[error("degenerate weight denominator 1'Θ1 = {0:e}")]
    DegenerateDenominator(f64),
    #[error("zero diagonal entry in precision estimate at {0}")]
    ZeroDiagonal(usize),
    #[error("degenerate estimate: {0}")]
    Degenerate(String),
    #[error("every grid point failed")]
    AllPointsFailed,
    #[error("loss series are not comparable: {0}")]
    IncomparableSeries(String),
    #[error("series of length {len} too short for max lag {max_lag}")]
    SeriesTooShort { len: usize, max_lag: usize },
    #[error("bad model dimensions: {0}")]
    BadDimensions(String),
    #[error("target error not reached below {cap} samples")]
    Unreachable { cap: usize },
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!(),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidInput(_) | BadDimensions(_) => ErrorClass::Config,
            Parse(_) | EmptyPanel { .. } | NonPositivePrice { .. } | HorizonTooLarge { .. }
            | TooFewRows { .. } | Io(_) | DimensionMismatch { .. } | IncomparableSeries(_)
            | SeriesTooShort { .. } => ErrorClass::Data,
            _ => ErrorClass::Numerical,
        }
    }
}
