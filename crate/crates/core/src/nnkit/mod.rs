//! A small dense/convolutional network engine with reverse-mode gradients
//! and Adam, in 64-bit floats.
//!
//! Dense layers take `[batch, features]` tensors; `conv3x3` layers take one
//! `[channels, height, width]` image (stride 1, zero padding, size preserving).

mod adam;
mod checkpoint;
mod gemm;
mod gradcheck;
mod layer;
mod network;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{gradcheck, GradCheckReport};
pub use layer::{Activation, LayerKind, LayerSpec, LEAKY_SLOPE};
pub use network::{Activations, Gradients, Network, NetworkParams, OutputGrad};
pub use tensor::Tensor;
