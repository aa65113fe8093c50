//! Dense tensors, a reverse-mode tape, Adam, and finite-difference checks.

mod adam;
mod gradcheck;
pub mod kernels;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport, TensorCheck};
pub use params::ParameterStore;
pub use scalar::Scalar;
pub use tape::{backward_gradients, Bound, Gradients, Tape, Var};
pub use tensor::Tensor;
