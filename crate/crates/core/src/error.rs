use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("leading coefficient vanishes below the truncation order")]
    ZeroLeadingCoefficient,
    #[error("series does not converge at tau with Im = {0}")]
    NonconvergentEvaluation(f64),
    #[error("theta vanishes identically at the torsion point (0,0)")]
    InvalidTorsionPoint,
    #[error("unknown series `{0}`")]
    UnknownSeries(String),
    #[error("malformed parameters: {0}")]
    MalformedParams(String),
    #[error("q-offset of a Pochhammer factor must be positive")]
    NonpositiveOffset,
    #[error("incompatible exponent lattices: {0}")]
    IncompatibleLattices(String),
    #[error("principal branch discontinuity on the integration path")]
    BranchCrossing,
    #[error("matrix is not unimodular")]
    NotUnimodular,
    #[error("evaluation point lies on an excluded lattice: {0}")]
    PolePoint(String),
    #[error("plumbing graph is not a tree: {0}")]
    NotATree(String),
    #[error("linking matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("class vector mismatch: {0}")]
    ClassVectorMismatch(String),
    #[error("shift set violates the closure property: {0}")]
    ClosureViolation(String),
    #[error("quadratic form is not positive definite (D = {0})")]
    NotPositiveDefiniteQ(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
