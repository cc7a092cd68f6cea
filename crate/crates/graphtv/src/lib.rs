//! Variational diffusion on sparse weighted graphs.
//!
//! The crate is organized around a single pair of discrete differential
//! operators — the graph gradient and its negative adjoint, the divergence —
//! and everything else is built on top of them:
//!
//! * [`graph`]: sparse symmetric graphs, node/edge fields, gradient,
//!   divergence, Laplacian, and the operator norm used for step-size and
//!   majorizer bounds.
//! * [`diffusion`]: explicit heat-kernel diffusion and total-variation
//!   regularized diffusion solved by the iterative diffusion-clip algorithm,
//!   plus the single-step layer form used inside neural networks.
//! * [`gnn`]: a small graph convolutional network with interleavable
//!   diffusion-clip layers, a deterministic full-batch trainer with manual
//!   backpropagation, and over-smoothing diagnostics.
//! * [`transport`]: conservative transport of a potential over the graph via
//!   coupled flux/potential updates, the equivalent leapfrog wave form, and
//!   two flow-recovery methods (an adversarially trained wave model and a
//!   two-step least-squares baseline).
//! * [`synth`]: seeded generators for stochastic-block-model classification
//!   tasks and transport trajectories with known ground-truth flows.
//!
//! The library is `no_std` (with `alloc`); all IO, file formats and the
//! command-line driver live in the companion `graphtv-cli` crate.
//!
//! Everything is deterministic: generators and trainers are pure functions of
//! their inputs including the seed, and no internal parallelism or
//! hash-ordering enters any numeric path.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod diffusion;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod synth;
pub mod transport;

pub use error::{Error, Result};
pub use graph::{EdgeField, Graph, NodeField};
