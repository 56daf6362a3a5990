//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod conv;
mod gradcheck;
mod ops;
mod sample;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_report, GradCheckReport};
pub use ops::{log_softmax_values, softmax_values, ElementwiseOp, ReduceOp};
pub use sample::{gaussian_density, gaussian_sample};
pub use tape::Tape;
pub use tensor::Tensor;
