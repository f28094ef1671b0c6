//! Dense numerics for small networks: tensors, fully connected layers,
//! activations, squared-error loss, Adam, and finite-difference checks.
//!
//! Gradients are written by hand per layer; there is no autodiff graph.

mod activation;
mod adam;
mod gradcheck;
mod linear;
mod loss;
mod params;
mod tensor;

pub use activation::{sigmoid, sigmoid_tensor, tanh_act, tanh_tensor};
pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use linear::Linear;
pub(crate) use linear::lookup;
pub use loss::mse_loss;
pub use params::{uniform_init, Param, ParamId, ParamSet};
pub(crate) use tensor::{gemm, Trans};
pub use tensor::{Shape, Tensor};
