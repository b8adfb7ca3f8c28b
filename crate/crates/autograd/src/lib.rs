//! Reverse-mode automatic differentiation for small convolutional networks.
//!
//! Values are dense row-major `f64` tensors. Feature maps are laid out as
//! `[channels, height, width]` for a single sample; batching is done by the
//! caller, one tape per sample, with gradients accumulated in a [`GradBuffer`].
//!
//! The engine is deliberately narrow: it covers exactly the operators needed
//! by two-stream saliency networks (convolutions with replicate padding,
//! pooling, bilinear resizing, attention gating, layer normalization, softmax
//! mixtures and binary cross-entropy).

mod kernels;
pub mod optim;
pub mod store;
mod tape;
mod tensor;

pub use kernels::{bilinear_axis_plan, resize_bilinear, resize_nearest};
pub use optim::{clip_grad_norm, Adam, Sgd};
pub use store::{Bound, GradBuffer, ParamId, ParamStore};
pub use tape::{add_n, concat_channels, lin_comb, Grads, Reduction, Tape, Var};
pub use tensor::Tensor;
