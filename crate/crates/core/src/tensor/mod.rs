//! Dense tensors and a reverse-mode differentiation tape.

pub mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod scalar;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use scalar::Scalar;
pub use tape::{conv_out_len, Gradients, Mode, Tape, Var, BCE_EPS};
pub use tensor::Tensor;

/// Negative slope used by every leaky ReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.01;

#[cfg(test)]
mod tests;
