//! Minimal tape-based reverse-mode autodiff over dense CPU tensors.
//!
//! Training runs in f32; the same kernels instantiate in f64 for
//! finite-difference verification.

pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use scalar::Scalar;
pub use tape::{Gradients, Graph, Var};
pub use tensor::Tensor;
