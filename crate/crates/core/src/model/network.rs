use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{encode_graph, AttentionTrace, EncoderConfig};
use super::decoder::{decode_graph, DecoderConfig};
use super::embedding::{embed_graph, EmbeddingConfig, TimeIndex};
use super::ModelError;
use crate::numerics::{Gradients, Graph, ParamStore, Scalar, Tensor, Var};
use crate::spatial::PatchLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub embedding: EmbeddingConfig,
    pub encoder: EncoderConfig,
    /// Forecast length `F`.
    pub horizon: usize,
}

impl ModelConfig {
    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            horizon: self.horizon,
            width: self.embedding.width(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.embedding.validate()?;
        if self.encoder.width != self.embedding.width() {
            return Err(ModelError::Config(format!(
                "encoder width {} differs from embedding width {}",
                self.encoder.width,
                self.embedding.width()
            )));
        }
        self.encoder.validate()?;
        if self.horizon == 0 {
            return Err(ModelError::Config("forecast horizon must be positive".into()));
        }
        Ok(())
    }

    /// Seeded initial parameters: embedding, then encoder, then decoder, all
    /// drawn from one stream.
    pub fn init(&self, seed: u64) -> Result<ParamStore<f64>, ModelError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.embedding.init(&mut store, &mut rng);
        if self.encoder.mix != super::AttentionMix::Off {
            self.encoder.init(&mut store, &mut rng);
        }
        self.decoder().init(&mut store, &mut rng);
        Ok(store)
    }

    pub fn check_params<T: Scalar>(&self, store: &ParamStore<T>) -> Result<(), ModelError> {
        self.embedding.check_params(store)?;
        if self.encoder.mix != super::AttentionMix::Off {
            self.encoder.check_params(store)?;
        }
        self.decoder().check_params(store)
    }
}

/// A batch of normalised histories laid out `[B·N, H]` with one timestamp
/// index per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub history: Tensor<f64>,
    pub times: Vec<TimeIndex>,
}

impl ModelInput {
    /// Stacks `[H, N]` windows sample by sample.
    pub fn from_windows(windows: &[&Tensor<f64>], times: Vec<TimeIndex>) -> Result<Self, ModelError> {
        Ok(Self {
            history: stack_transposed(windows)?,
            times,
        })
    }

    pub fn batch(&self) -> usize {
        self.times.len()
    }
}

/// `B` tensors of shape `[A, N]` → `[B·N, A]`.
pub fn stack_transposed(parts: &[&Tensor<f64>]) -> Result<Tensor<f64>, ModelError> {
    let first = parts.first().ok_or_else(|| ModelError::Config("empty batch".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(parts.len() * first.numel());
    for p in parts {
        if p.shape() != shape {
            return Err(ModelError::Config(format!("batch mixes shapes {shape:?} and {:?}", p.shape())));
        }
        data.extend_from_slice(p.swap_axes(0, 1)?.data());
    }
    Ok(Tensor::new(vec![parts.len() * shape[1], shape[0]], data)?)
}

/// The full network bound to one spatial layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchModel {
    pub config: ModelConfig,
    pub layout: PatchLayout,
}

impl PatchModel {
    pub fn new(config: ModelConfig, layout: PatchLayout) -> Result<Self, ModelError> {
        config.validate()?;
        if layout.n_points() != config.embedding.points {
            return Err(ModelError::Config(format!(
                "layout covers {} points, model expects {}",
                layout.n_points(),
                config.embedding.points
            )));
        }
        Ok(Self { config, layout })
    }

    /// Records the forward pass; returns `[B·N, F]` in normalised units.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, input: &ModelInput, trace: Option<&mut AttentionTrace>) -> Result<Var, ModelError> {
        let b = input.batch();
        let d = self.config.embedding.width();
        let (r, p) = (self.layout.patches(), self.layout.patch_size());
        let history = g.input(input.history.cast())?;
        let embedded = embed_graph(g, store, &self.config.embedding, history, &input.times)?;
        let patched = g.gather_rows(embedded, &self.layout.gather_index(b))?;
        let patched = g.reshape(patched, &[b * r, p, d])?;
        let encoded = encode_graph(g, store, &self.config.encoder, patched, b, trace)?;
        decode_graph(g, store, &self.config.decoder(), encoded, &self.layout, b)
    }

    /// Mean L1 loss against `target: [B·N, F]` and its parameter gradients.
    pub fn loss_and_gradients(&self, store: &ParamStore<f64>, input: &ModelInput, target: &Tensor<f64>) -> Result<(f64, Gradients<f64>), ModelError> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, input, None)?;
        let loss = g.l1_loss(out, target)?;
        let grads = g.backward(loss, store)?;
        Ok((g.value(loss).data()[0], grads))
    }

    /// Per-sample `[F, N]` forecasts in normalised units.
    pub fn predict(&self, store: &ParamStore<f64>, input: &ModelInput) -> Result<Vec<Tensor<f64>>, ModelError> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, input, None)?;
        let (n, f) = (self.layout.n_points(), self.config.horizon);
        g.value(out)
            .data()
            .chunks(n * f)
            .map(|c| Ok(Tensor::new(vec![n, f], c.to_vec())?.swap_axes(0, 1)?))
            .collect()
    }
}
