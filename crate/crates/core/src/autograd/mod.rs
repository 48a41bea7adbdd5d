//! Dense `f64` tensors, a define-by-run gradient tape and the Adam optimizer.
//!
//! Values and gradients are stored and accumulated in 64-bit floating point.

mod adam;
mod param;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{RowSource, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod gradcheck_tests;
