use thiserror::Error;

/// Errors raised while building or validating panel data.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("no records supplied")]
    Empty,
    #[error("missing cell: unit `{unit}` has no observation for period `{period}`")]
    MissingCell { unit: String, period: String },
    #[error("duplicate cell: unit `{unit}`, period `{period}` appears more than once")]
    DuplicateCell { unit: String, period: String },
    #[error("non-finite value in unit `{unit}`, period `{period}`")]
    NonFiniteValue { unit: String, period: String },
    #[error("regressor dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("panel needs at least 2 periods to split, found {0}")]
    TooFewPeriods(usize),
    #[error("invalid evaluation spec: {0}")]
    InvalidSpec(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Errors raised by kernel-constant evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("integration region is empty (c0 = {0:e})")]
    EmptyRegion(f64),
    #[error("moment matrix C is singular")]
    SingularC,
    #[error("geometry dimension {found} does not match kernel dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Errors raised by the LLQR / LLSQR solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no unit has positive kernel weight at the evaluation point")]
    NoLocalData,
    #[error("local design is rank deficient (rank {rank} < {needed})")]
    RankDeficientDesign { rank: usize, needed: usize },
    #[error("solver did not converge within {0} iterations")]
    MaxIterationsExceeded(usize),
    #[error("line search failed to decrease the objective at iteration {0}")]
    LineSearchFailed(usize),
    #[error("initial fit has {found} intercepts, panel has {expected} units")]
    InitMismatch { expected: usize, found: usize },
    #[error("{sample} sample: {source}")]
    Sample {
        sample: &'static str,
        #[source]
        source: Box<FitError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Errors raised by the inference formulas.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("degenerate density estimate: {0}")]
    DegenerateDensity(String),
    #[error("singular moment matrix")]
    SingularMoment,
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Errors raised by the simulation harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("no closed-form quantile partial effect for {0}")]
    Unsupported(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
