//! Deterministic dense tensor kernels: grouped convolution, pooling,
//! activations, reductions, and layout ops over rank-1/2/4 tensors, plus a
//! recording tape for reverse-mode differentiation verified against central
//! finite differences.
//!
//! Data parallelism (rayon, `parallel` feature, on by default) splits work
//! over disjoint output planes only, so results are bit-identical whether it
//! is enabled, disabled at runtime, or compiled out.

pub mod backend;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod parallel;
pub mod tape;
pub mod tensor;

pub use backend::{Backend, Eager};
pub use error::{Error, Result};
pub use tensor::{alloc_count, max_rel_diff, rel_diff, Scalar, Tensor};
