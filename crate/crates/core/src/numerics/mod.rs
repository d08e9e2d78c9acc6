//! Dense tensors, reverse-mode differentiation and gradient checking.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::{central_difference, check_gradient, finite_diff_check, max_relative_error};
pub use tape::{Gradients, ParamId, Tape, Var};
pub use tensor::{layer_norm, matmul, softmax, Tensor, LAYER_NORM_EPS};
