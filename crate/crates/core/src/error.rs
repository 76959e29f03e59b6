use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every failure the estimator can report.
///
/// Variant names are part of the command-line contract: the CLI prints them
/// verbatim when an estimation fails.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("all sample sites coincide; the kernel range would be zero")]
    AllPointsCoincident,
    #[error("invalid knot count {requested} for {available} sites")]
    InvalidKnotCount { requested: usize, available: usize },
    #[error("kernel range must be positive, got {0}")]
    NonPositiveRange(f64),
    #[error("problem size {size} exceeds the configured guard {limit}")]
    SizeGuardExceeded { size: usize, limit: usize },
    #[error("no eigenvalue of the centered proximity matrix is positive")]
    DegenerateKernel,
    #[error("knot eigenvalue {0} makes the Nystrom correction singular")]
    SingularCorrection(f64),
    #[error("basis has no knots; new-site evaluation needs a Nystrom basis")]
    MissingKnots,
    #[error("vector is constant; the Moran coefficient is undefined")]
    ConstantVector,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("eigenvalue {0} is not positive")]
    NonPositiveEigenvalue(f64),
    #[error("the mixed-model matrix P is numerically singular")]
    SingularP,
    #[error("residual sum of squares is zero; the restricted likelihood is undefined")]
    PerfectFit,
    #[error("residual norm evaluated to {0}; catastrophic cancellation")]
    NegativeResidualNorm(f64),
    #[error("the fixed block of the per-coefficient cache is numerically singular")]
    SingularBlock,
    #[error("the per-evaluation inner matrix is numerically singular")]
    SingularInnerMatrix,
    #[error("need more observations than coefficients (N = {n}, K = {k})")]
    InsufficientData { n: usize, k: usize },
    #[error("local normal matrix at site {site} is numerically singular")]
    LocalSingularity { site: usize },
    #[error("every candidate bandwidth produced a singular local fit")]
    NoValidBandwidth,
    #[error("shape mismatch between true and estimated surfaces")]
    ShapeMismatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

impl Error {
    /// Stable variant name, used by the CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::AllPointsCoincident => "AllPointsCoincident",
            Error::InvalidKnotCount { .. } => "InvalidKnotCount",
            Error::NonPositiveRange(_) => "NonPositiveRange",
            Error::SizeGuardExceeded { .. } => "SizeGuardExceeded",
            Error::DegenerateKernel => "DegenerateKernel",
            Error::SingularCorrection(_) => "SingularCorrection",
            Error::MissingKnots => "MissingKnots",
            Error::ConstantVector => "ConstantVector",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::NonPositiveEigenvalue(_) => "NonPositiveEigenvalue",
            Error::SingularP => "SingularP",
            Error::PerfectFit => "PerfectFit",
            Error::NegativeResidualNorm(_) => "NegativeResidualNorm",
            Error::SingularBlock => "SingularBlock",
            Error::SingularInnerMatrix => "SingularInnerMatrix",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::LocalSingularity { .. } => "LocalSingularity",
            Error::NoValidBandwidth => "NoValidBandwidth",
            Error::ShapeMismatch => "ShapeMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
        }
    }
}
