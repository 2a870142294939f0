use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdxError {
    #[error("point {x} lies on a branch boundary (iterate {iterate})")]
    BoundaryPoint { x: f64, iterate: usize },

    #[error("point {0} is outside [0, 1]")]
    OutOfDomain(f64),

    #[error("two candidate periods {0} and {1} both pass the tolerance; refine tol")]
    ToleranceAmbiguous(usize, usize),

    #[error("infinite branch family truncated at depth {depth} (omitted mass {omitted_mass:e})")]
    TruncationWarning { depth: usize, omitted_mass: f64 },

    #[error("branch {0} is not monotone on its domain")]
    NonMonotoneBranch(usize),

    #[error("interval budget of {0} pieces exceeded")]
    BudgetExceeded(usize),

    #[error("map `{0}` has no exact inverse branches")]
    NoExactInverse(String),

    #[error("hypothesis failed: {0}")]
    HypothesisFailed(String),

    #[error("preimages of the hole are not pairwise disjoint; radius {0} too large")]
    DisjointnessFailed(f64),

    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),

    #[error("power iteration did not converge in {0} iterations")]
    NoConvergence(usize),

    #[error("censored fraction {censored:e} exceeds 1e-3 of survival {p_hat:e}")]
    ExcessCensoring { censored: f64, p_hat: f64 },

    #[error("unresolved return mass {0:e} exceeds tolerance")]
    UnresolvedMassExceeds(f64),

    #[error("orbit entered unresolved return mass at return {0}")]
    UnresolvedBranchHit(usize),

    #[error("tail lengths not positive and nonincreasing at n = {0}")]
    NonMonotoneLengths(usize),

    #[error("induced map is not full-branched")]
    NonFullBranched,

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, OdxError>;

impl From<std::io::Error> for OdxError {
    fn from(e: std::io::Error) -> Self {
        OdxError::Io(e.to_string())
    }
}
