//! The forecasting network: spatio-temporal embedding, dual-attention
//! encoder over the patched layout, and the unpadding decoder.

pub mod attention;
pub mod decoder;
pub mod embedding;
mod network;

pub use attention::{breadth_attention, depth_attention, encode, AttentionMix, AttentionTrace, EncoderConfig};
pub use decoder::{decode, l1_loss, DecoderConfig};
pub use embedding::{embed, time_index, EmbeddingConfig, TimeIndex};
pub use network::{stack_transposed, ModelConfig, ModelInput, PatchModel};

use crate::numerics::TensorError;
use crate::spatial::SpatialError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{what} index {index} is outside the dictionary of {size} rows")]
    TimeOutOfRange { what: &'static str, index: usize, size: usize },
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

/// Uniform `±bound` initialisation into `store`, drawing in call order.
pub(crate) fn init_uniform<R: rand::Rng + ?Sized>(store: &mut crate::numerics::ParamStore<f64>, name: &str, shape: &[usize], bound: f64, rng: &mut R) {
    store.insert(name, crate::numerics::Tensor::uniform(shape, bound, rng));
}

pub(crate) fn require<T: crate::numerics::Scalar>(store: &crate::numerics::ParamStore<T>, name: &str, shape: &[usize]) -> Result<(), ModelError> {
    match store.get(name) {
        None => Err(ModelError::MissingParameter(name.to_string())),
        Some(t) if t.shape() != shape => Err(ModelError::Config(format!(
            "parameter `{name}` has shape {:?}, expected {shape:?}",
            t.shape()
        ))),
        Some(_) => Ok(()),
    }
}
