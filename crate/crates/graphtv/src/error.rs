//! Error type shared by every module.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Validation and runtime failures.
///
/// Construction-time validation (graph building, field shapes, configuration)
/// and numerical failures (unstable step sizes, diverging solvers) are kept
/// as distinct variants so callers can map them to different exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("node index {index} out of range for graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("self-loop on node {node}")]
    SelfLoop { node: usize },

    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },

    #[error("edge ({i}, {j}) has invalid weight {w}; weights must be finite and > 0")]
    InvalidWeight { i: usize, j: usize, w: f64 },

    #[error("dimension mismatch in {context}: got {got}, expected {expected}")]
    DimensionMismatch {
        context: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("step size {tau} outside the stable range (0, {max}]")]
    UnstableStep { tau: f64, max: f64 },

    #[error("{context} diverged at step {step}")]
    Diverged { context: &'static str, step: usize },

    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}
