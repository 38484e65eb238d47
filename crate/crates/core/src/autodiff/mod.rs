//! Minimal reverse-mode differentiation over dense tensors.

mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use tape::{sigmoid, Gradients, OpKind, Tape, Var, LAYER_NORM_EPS, NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
