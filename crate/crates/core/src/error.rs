use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),
    #[error("out of domain: t = {t} not in [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("negative span in knot window at knot index {0}")]
    NegativeSpan(usize),
    #[error("degenerate knot window for derivative control point {0}")]
    DegenerateKnotWindow(usize),
    #[error("derivative order {order} exceeds degree {degree}")]
    InvalidOrder { order: usize, degree: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("corridor gap: {0}")]
    CorridorGap(String),
    #[error("path cell {0:?} is occupied")]
    OccupiedCell([usize; 3]),
    #[error("assignment infeasible: {0}")]
    AssignmentInfeasible(String),
    #[error("unreachable: no path from start to goal")]
    Unreachable,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("quadratic program is not strictly convex on the equality-constrained subspace")]
    NotStrictlyConvex,
    #[error("infeasible problem: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
