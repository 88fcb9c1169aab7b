//! Minimal dense-tensor kernel: a reverse-mode tape over row-major
//! matrices, a fused multi-head attention op, Adam, and a named-tensor
//! archive for checkpoints.
//!
//! Storage is `f32`; every op is generic over [`Scalar`] so the same code
//! can run in `f64` for finite-difference verification.

pub mod archive;
#[cfg(test)]
pub(crate) mod gradcheck;
pub mod attention;
pub mod graph;
pub mod nn;
pub mod params;
pub mod scalar;

pub use archive::{Archive, NamedTensor};
pub use graph::{Axis, Gradients, Graph, Var};
pub use params::{Adam, ParamSet, Parameter};
pub use scalar::Scalar;
