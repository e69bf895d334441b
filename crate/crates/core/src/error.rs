use alloc::string::String;
use alloc::vec::Vec;

use crate::probspace::{NodeId, SpaceViolation};
use crate::splitstop::SplitTimeViolation;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid probability space: {0}")]
    Space(SpaceViolation),

    #[error("tree specification is malformed: {0}")]
    MalformedTree(String),

    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),

    #[error("expected {expected} node values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("object was built on a different probability space")]
    SpaceMismatch,

    #[error("pre-channel is not predictable: children of node {parent} disagree")]
    PreNotPredictable { parent: NodeId },

    #[error("pre-channel at the root must equal the value at the root")]
    Pre0Mismatch,

    #[error("value at node {node} is not finite")]
    NonFinite { node: NodeId },

    #[error("invalid split stopping time: {0:?}")]
    InvalidSplitTime(Vec<SplitTimeViolation>),

    #[error("event is not measurable with respect to the required sigma-algebra")]
    NotMeasurable,

    #[error("split stopping times are not ordered as required")]
    NotOrdered,

    #[error("enumeration would produce {count} split stopping times, cap is {cap}")]
    EnumerationCapExceeded { count: u128, cap: u128 },

    #[error("terminal split time is not supported by the backward recursion")]
    UnsupportedTerminal,

    #[error("process is not a strong supermartingale at node {node} (deviation {deviation:e})")]
    NotASupermartingale { node: NodeId, deviation: f64 },

    #[error("process is not a martingale at node {node} (deviation {deviation:e})")]
    NotAMartingale { node: NodeId, deviation: f64 },

    #[error("lambda must lie strictly between 0 and 1, got {0}")]
    LambdaOutOfRange(f64),

    #[error("obstacle must be nonnegative, node {node} has {value}")]
    NegativeObstacle { node: NodeId, value: f64 },

    #[error("driver has no declared Lipschitz bound")]
    MissingLipschitzBound,

    #[error("declared Lipschitz bound {declared} is below the coefficient bound {required}")]
    LipschitzBoundViolated { declared: f64, required: f64 },

    #[error("obstacles are not admissible: {0}")]
    NotAdmissible(String),

    #[error("coupled iteration did not settle: Mokobodzki condition could not be verified")]
    MokobodzkiFailed,

    #[error(
        "iteration did not converge after {iterations} steps (last increment {last_increment:e})"
    )]
    NoConvergence {
        iterations: usize,
        last_increment: f64,
    },

    #[error("coupled fixed-point residual {residual:e} exceeds tolerance {tol:e}")]
    CoupledResidualTooLarge { residual: f64, tol: f64 },

    #[error("invariant `{name}` violated (deviation {deviation:e})")]
    InvariantViolation { name: &'static str, deviation: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = core::result::Result<T, Error>;
