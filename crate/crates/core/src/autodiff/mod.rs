//! Dense `f64` tensors with a reverse-mode tape.

pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_params};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
