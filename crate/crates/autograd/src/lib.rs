//! A small, single-threaded tensor engine with tape-based reverse-mode
//! differentiation.
//!
//! Tensors are dense and row-major; image tensors use the NCHW layout.
//! Every operation is generic over [`Scalar`] so that the same model code
//! runs in `f32` for training and in `f64` for finite-difference checks.
//! All kernels are deterministic: the same inputs always produce the same
//! bits.

mod graph;
mod ops;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::conv::conv2d_forward;
pub use ops::loss::IGNORE_LABEL;
pub use ops::norm::BatchStats;
pub use optim::{Adam, AdamConfig, AdamState};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tensor::Tensor;
