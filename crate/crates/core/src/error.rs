use alloc::string::String;

/// Errors raised by the smoothing, differentiation and tuning routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },
    #[error("entry (t={t}, i={i}) out of bounds for a {rows}x{cols} measurement array")]
    IndexOutOfBounds {
        t: usize,
        i: usize,
        rows: usize,
        cols: usize,
    },
    #[error("parameter matrix {0} contains a non-finite value")]
    NonFinite(&'static str),
    #[error("known set is empty")]
    EmptyKnownSet,
    #[error("invalid fractions: mask {mask} + test {test} must be in [0, 1) each and sum below 1")]
    FractionsExceedOne { mask: f64, test: f64 },
    #[error("constrained entry (t={t}, i={i}) has no measured value")]
    ConstrainedNotKnown { t: usize, i: usize },
    #[error("masked entry (t={t}, i={i}) has no measured value")]
    MaskedEntryMissing { t: usize, i: usize },
    #[error("right-hand side has length {found}, KKT order is {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("KKT sparsity pattern differs from the analyzed pattern")]
    PatternMismatch,
    #[error("KKT matrix is singular even with diagonal regularization {reg:e}")]
    SingularAfterRegularization { reg: f64 },
    #[error("unsupported regularizer combination on {target}: {detail}")]
    NonSeparableCombination {
        target: &'static str,
        detail: &'static str,
    },
    #[error("invalid regularizer: {0}")]
    InvalidRegularizer(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("noise covariance {0} is not symmetric positive semidefinite")]
    NonPsdNoise(&'static str),
    #[error("reference least squares problem is rank deficient")]
    OracleRankDeficient,
    #[error("problem of size {size} exceeds the oracle limit {limit}")]
    TooLargeForOracle { size: usize, limit: usize },
}

impl Error {
    /// Stable name of the variant, for machine-readable reporting.
    pub fn class(&self) -> &'static str {
        match self {
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::IndexOutOfBounds { .. } => "IndexOutOfBounds",
            Self::NonFinite(_) => "NonFinite",
            Self::EmptyKnownSet => "EmptyKnownSet",
            Self::FractionsExceedOne { .. } => "FractionsExceedOne",
            Self::ConstrainedNotKnown { .. } => "ConstrainedNotKnown",
            Self::MaskedEntryMissing { .. } => "MaskedEntryMissing",
            Self::LengthMismatch { .. } => "LengthMismatch",
            Self::PatternMismatch => "PatternMismatch",
            Self::SingularAfterRegularization { .. } => "SolverFailure",
            Self::NonSeparableCombination { .. } => "NonSeparableCombination",
            Self::InvalidRegularizer(_) => "InvalidRegularizer",
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::NonPsdNoise(_) => "NonPsdNoise",
            Self::OracleRankDeficient => "OracleRankDeficient",
            Self::TooLargeForOracle { .. } => "TooLargeForOracle",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
