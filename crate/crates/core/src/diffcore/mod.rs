//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! Covers exactly the classical layers used by the hybrid models: linear,
//! 3x3 convolution, ReLU, 2x2 max-pool, `pi * tanh` angle scaling, softmax,
//! and the cross-entropy / KL losses. A [`Graph`] records one forward pass
//! and supports one backward pass.

mod graph;
pub mod ops;
mod params;
mod tensor;

pub use graph::{CustomOp, Gradients, Graph, NodeId};
pub use params::{angle_uniform, glorot_uniform, group_of, LayerParams};
pub use tensor::Tensor;
