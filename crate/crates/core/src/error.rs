//! Error type shared by the whole crate.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("division by an element indistinguishable from zero at precision")]
    DivisionByZeroAtPrecision,

    #[error("precision budget exhausted: {0}")]
    PrecisionExhausted(String),

    #[error("input is zero at precision")]
    ZeroInput,

    #[error("window overflow: {0}")]
    WindowOverflow(String),

    #[error("series is not composable: {0}")]
    NotComposable(String),

    #[error("series is not divisible: {0}")]
    NotDivisible(String),

    #[error("logarithmic series did not converge within the iteration cap")]
    LogDivergent,

    #[error("matrix is ill-conditioned at precision: {0}")]
    IllConditioned(String),

    #[error("matrix is singular at precision")]
    SingularAtPrecision,

    #[error("module validation failure: {0}")]
    ValidationFailure(String),

    #[error("Frobenius scalar is not a unit (module is not etale)")]
    NotEtale,

    #[error("operator log series diverged for every stored generator")]
    LogSeriesDivergent,

    #[error("invariant search hit the lattice boundary: {0}")]
    SearchWindowTooSmall(String),

    #[error("comparison twist mismatch: {0}")]
    MismatchedTwist(String),

    #[error("construction requires nonpositive weights")]
    PositiveWeights,

    #[error("stability failure: {0}")]
    StabilityFailure(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
