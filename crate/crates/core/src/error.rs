use alloc::string::String;

/// Errors produced by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix {name} must be {property}")]
    InvalidMatrix {
        name: &'static str,
        property: &'static str,
    },

    #[error("closed loop is unstable (spectral radius {0})")]
    Unstable(f64),

    #[error("system is not stabilizable: {0}")]
    NotStabilizable(&'static str),

    #[error("eigenvalue solver did not converge")]
    EigenFailure,

    #[error("{0} did not converge within {1} iterations")]
    NoConvergence(&'static str, usize),

    #[error("regressor is rank deficient: rank {rank} of {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("Fisher information estimate is singular")]
    SingularFisher,

    #[error("confidence level delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),

    #[error("no iterate stabilized any scenario")]
    AllScenariosUnstable,

    #[error("no candidate gain stabilizes every scenario")]
    NoStabilizingCandidate,

    #[error("precondition violated: {0}")]
    PreconditionViolated(&'static str),

    #[error("pendulum parameters are not identifiable from the data (jacobian rank {0})")]
    NotIdentifiable(usize),

    #[error("pendulum identification did not converge, last iterate m={m}, l={l}, g={g}")]
    IdentificationFailed { m: f64, l: f64, g: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = core::result::Result<T, Error>;
