//! Error and warning types shared across the crate.

use thiserror::Error;

/// Errors produced by shape-space construction, projection and solvers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The centered landmark matrix has (numerically) zero norm, i.e. all
    /// landmarks coincide.
    #[error("degenerate configuration: centered landmark matrix has norm {norm:.3e}")]
    DegenerateConfiguration { norm: f64 },

    /// A landmark matrix violates a structural requirement (dimensions,
    /// finiteness, ...). The message names the offending field.
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    /// A pre-shape matrix violates the centering/unit-norm invariants.
    #[error("invalid pre-shape: {0}")]
    InvalidPreShape(String),

    /// Geodesic between (numerically) antipodal shapes is not unique.
    #[error("antipodal shapes: distance {theta:.6} rad leaves no unique geodesic")]
    AntipodalShapes { theta: f64 },

    /// An iteration budget was exhausted before the residual dropped below
    /// the requested tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A prefix sum of barycentric weights is too close to zero for the
    /// inductive recursion to be well defined.
    #[error("degenerate weight prefix sum at index {index}: |sum| = {value:.3e}")]
    PrefixSumDegenerate { index: usize, value: f64 },

    /// Weights sum to zero and cannot be normalized.
    #[error("weights sum to zero")]
    ZeroSum,

    /// The projected configuration collapses (viewed edge-on).
    #[error("degenerate projection: projected configuration has norm {norm:.3e}")]
    DegenerateProjection { norm: f64 },

    /// The centered target of a camera fit has rank < 2.
    #[error("degenerate target: centered configuration has rank below 2")]
    DegenerateTarget,

    /// Every solver restart failed at initialization.
    #[error("all {restarts} restarts failed; last error: {last}")]
    AllRestartsFailed { restarts: usize, last: String },

    /// A basis set violates its invariants (distinctness, regularity, ...).
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    /// A weight vector violates a precondition of the called operation.
    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    /// Two operands have incompatible dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Non-fatal conditions surfaced alongside results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warning {
    /// The optimal aligning rotation is not unique (tied singular values).
    NonUniqueAlignment,
    /// No backtracking step of a rotation sub-problem decreased the objective.
    StalledRotationStep,
    /// No backtracking step of a weight sub-problem decreased the objective.
    StalledWeightStep,
    /// The coefficient normal system was rank deficient; the minimum-norm
    /// solution was taken.
    RankDeficientCoefficients,
    /// A camera refit would have increased the residual and was rejected.
    StalledCameraStep,
    /// Generalized Procrustes analysis stopped at its iteration budget.
    GpaNoConvergence,
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Warning::NonUniqueAlignment => "non-unique alignment",
            Warning::StalledRotationStep => "stalled rotation step",
            Warning::StalledWeightStep => "stalled weight step",
            Warning::RankDeficientCoefficients => "rank-deficient coefficient system",
            Warning::StalledCameraStep => "stalled camera step",
            Warning::GpaNoConvergence => "generalized Procrustes analysis did not converge",
        };
        f.write_str(s)
    }
}
