//! Dense tensors, a reverse-mode tape, and the AdamW optimiser.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod params;
mod scalar;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use graph::{FlopCounter, FlopKind, Gradients, Graph, Var};
pub use params::{clip_grad_norm, AdamW, ParamStore};
pub use scalar::Scalar;
pub use tensor::{Tensor, TensorError};
