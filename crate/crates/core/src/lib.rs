//! Differentiable camera geometry and a neural projection layer for view-invariant clip
//! classification, with a minimal reverse-mode differentiation engine.
//!
//! The crate is `no_std` and needs only `alloc`.
#![no_std]
// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod camera;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod math;
pub mod model;
pub mod npl;
pub mod ops;
pub mod param;
pub mod registry;
pub mod synthdata;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use param::{sgd_step, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
