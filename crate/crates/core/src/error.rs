//! Error type shared by all modules.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// The stacked edge matrix has full column rank: the geometry admits no
    /// displacement constraint (e.g. two non-colinear neighbors).
    #[error("edge matrix has full column rank; no displacement constraint exists")]
    NullSpaceEmpty,
    /// The edge matrix null space has dimension greater than one, so the
    /// weights are not unique up to scale.
    #[error("edge matrix null space has dimension {dim}; weights not unique up to scale")]
    DegenerateGeometry { dim: usize },
    #[error("follower {agent} has no displacement constraint")]
    MissingConstraint { agent: usize },
    #[error("formation is not localizable: follower block of the follower matrix is singular")]
    NotLocalizable,
    #[error("index {index} out of range (< {limit} expected)")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("time {t} outside plan horizon [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },
    #[error("pole {pole} has nonnegative real part")]
    UnstablePole { pole: f64 },
    #[error("(A, C) is not detectable: eigenvalue {eigenvalue} is unobservable")]
    NotDetectable { eigenvalue: f64 },
    #[error("Riccati solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    RiccatiDiverged { residual: f64, iterations: usize },
    #[error("leader error system eigenvector matrix is ill-conditioned ({cond:.3e})")]
    DefectiveW { cond: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("controller called for the wrong role: agent {agent} is a {actual}")]
    RoleMismatch { agent: usize, actual: &'static str },
    #[error("agent {agent} is missing the estimate or output of weighted neighbor {neighbor}")]
    MissingNeighbor { agent: usize, neighbor: usize },
    #[error("missing relative estimate for edge ({agent}, {neighbor})")]
    MissingEdgeEstimate { agent: usize, neighbor: usize },
    /// An initial leader error exceeds the declared bound zeta.
    #[error("leader {agent} starts with error {error_norm:.6e} > zeta = {zeta:.6e}")]
    ZetaViolated { agent: usize, error_norm: f64, zeta: f64 },
    #[error("state norm exceeded {limit:.1e} at t = {t}")]
    NumericalBlowup { t: f64, limit: f64 },
    #[error("leader {agent} input norm {norm:.6e} exceeds gamma_u = {gamma_u:.6e} at t = {t}")]
    BoundViolated { agent: usize, t: f64, norm: f64, gamma_u: f64 },
    /// Invalid input that violates a documented precondition or invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
