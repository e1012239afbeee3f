use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical core. Node numbers carried by the
/// variants are one-based, ready for display.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid gossip plan: {0}")]
    InvalidPlan(String),
    #[error("degenerate pair ({0}, {0})")]
    DegeneratePair(usize),
    #[error("gossip plan undefined for isolated node {0}")]
    IsolatedNode(usize),
    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(&'static str),
    #[error("gossip plan does not converge (lambda2 = {0})")]
    NotConvergent(f64),
    #[error("degenerate prior: prior covariance is singular")]
    DegeneratePrior,
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("missing measurement for node {0}")]
    MissingMeasurement(usize),
    #[error("Riccati diverged (trace {0:e})")]
    RiccatiDiverged(f64),
    #[error("no convergence after {iterations} iterations (last ratio {last_ratio:e})")]
    MaxIterations { iterations: usize, last_ratio: f64 },
    #[error("node {0} unschedulable: no power-feasible selection with finite steady-state cost")]
    Unschedulable(usize),
    #[error("Monte-Carlo run {run} failed: {source}")]
    Run { run: usize, source: Box<Error> },
}

impl Error {
    /// True for failures of an iterative numerical method (as opposed to
    /// bad inputs).
    pub fn is_numerical(&self) -> bool {
        if let Error::Run { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::RiccatiDiverged(_)
                | Error::MaxIterations { .. }
                | Error::NotConvergent(_)
                | Error::Unschedulable(_)
        )
    }
}
