//! Dual attention over the patched layout.
//!
//! Depth attention mixes the `P` slots inside each patch; breadth attention
//! mixes the `R` patches at each fixed slot index. A layer applies depth then
//! breadth. Each block's query, key and value matrices are stored `[d, d]`;
//! head `i` owns columns `i·d/o .. (i+1)·d/o`.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use super::{init_uniform, require, ModelError};
use crate::numerics::checkpoint::write_tensor_list;
use crate::numerics::{FlopKind, Graph, ParamStore, Scalar, Tensor, Var};

pub const TRACE_MAGIC: &[u8; 5] = b"PSTA1";
const NORM_EPS: f64 = 1e-5;

/// Which attention blocks each layer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMix {
    Dual,
    DepthOnly,
    BreadthOnly,
    /// No encoder: embeddings go straight to the decoder.
    Off,
}

impl AttentionMix {
    pub fn depth(self) -> bool {
        matches!(self, Self::Dual | Self::DepthOnly)
    }

    pub fn breadth(self) -> bool {
        matches!(self, Self::Dual | Self::BreadthOnly)
    }
}

impl fmt::Display for AttentionMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dual => "dual",
            Self::DepthOnly => "depth",
            Self::BreadthOnly => "breadth",
            Self::Off => "none",
        })
    }
}

impl FromStr for AttentionMix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dual" => Ok(Self::Dual),
            "depth" => Ok(Self::DepthOnly),
            "breadth" => Ok(Self::BreadthOnly),
            "none" => Ok(Self::Off),
            other => Err(format!("unknown attention mix `{other}` (dual|depth|breadth|none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Depth,
    Breadth,
}

impl Block {
    fn name(self) -> &'static str {
        match self {
            Block::Depth => "depth",
            Block::Breadth => "breadth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub residual: bool,
    pub layer_norm: bool,
    pub mix: AttentionMix,
}

/// Parameter name for one part of one block, e.g. `encoder.0.depth.query`.
pub fn param_name(layer: usize, block: Block, part: &str) -> String {
    format!("encoder.{layer}.{}.{part}", block.name())
}

impl EncoderConfig {
    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || self.width == 0 || self.width % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "model width {} is not divisible by head count {}",
                self.width, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(ModelError::Config("encoder needs at least one layer".into()));
        }
        Ok(())
    }

    fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        if self.mix.depth() {
            out.push(Block::Depth);
        }
        if self.mix.breadth() {
            out.push(Block::Breadth);
        }
        out
    }

    /// Registers every block's weights, drawn from `±sqrt(1/d)`.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore<f64>, rng: &mut R) {
        let d = self.width;
        let bound = (1.0 / d as f64).sqrt();
        for layer in 0..self.layers {
            for block in self.blocks() {
                for part in ["query", "key", "value", "output"] {
                    init_uniform(store, &param_name(layer, block, part), &[d, d], bound, rng);
                }
                if self.layer_norm {
                    store.insert(&param_name(layer, block, "norm.gamma"), Tensor::full(&[d], 1.0));
                    store.insert(&param_name(layer, block, "norm.beta"), Tensor::zeros(&[d]));
                }
            }
        }
    }

    pub fn check_params<T: Scalar>(&self, store: &ParamStore<T>) -> Result<(), ModelError> {
        let d = self.width;
        for layer in 0..self.layers {
            for block in self.blocks() {
                for part in ["query", "key", "value", "output"] {
                    require(store, &param_name(layer, block, part), &[d, d])?;
                }
                if self.layer_norm {
                    require(store, &param_name(layer, block, "norm.gamma"), &[d])?;
                    require(store, &param_name(layer, block, "norm.beta"), &[d])?;
                }
            }
        }
        Ok(())
    }
}

/// Attention probabilities recorded during a forward pass, one entry per
/// layer, block and head. Depth maps are `[B·R, P, P]`, breadth maps
/// `[B·P, R, R]`.
pub type AttentionTrace = Vec<(String, Var)>;

/// Multi-head scaled dot-product attention over the middle axis of
/// `x: [G, S, d]`, followed by the optional residual and layer norm.
pub fn attend_graph<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    x: Var,
    layer: usize,
    block: Block,
    mut trace: Option<&mut AttentionTrace>,
) -> Result<Var, ModelError> {
    let d = cfg.width;
    if g.shape(x).len() != 3 || g.shape(x)[2] != d {
        return Err(ModelError::Config(format!("attention input {:?} must be [G, S, {d}]", g.shape(x))));
    }
    let dh = cfg.head_width();
    let wq = g.param(store, &param_name(layer, block, "query"))?;
    let wk = g.param(store, &param_name(layer, block, "key"))?;
    let wv = g.param(store, &param_name(layer, block, "value"))?;
    let wo = g.param(store, &param_name(layer, block, "output"))?;
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (qh, kh, vh) = if cfg.heads == 1 {
            (q, k, v)
        } else {
            (g.slice_last(q, h * dh, dh)?, g.slice_last(k, h * dh, dh)?, g.slice_last(v, h * dh, dh)?)
        };
        let logits = g.matmul_kind(qh, kh, true, FlopKind::Mixing)?;
        let logits = g.scale(logits, scale)?;
        let probs = g.softmax_last(logits)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push((format!("{}.head{h}", param_name(layer, block, "attention")), probs));
        }
        heads.push(g.matmul_kind(probs, vh, false, FlopKind::Mixing)?);
    }
    let mixed = if heads.len() == 1 { heads[0] } else { g.concat_last(&heads)? };
    let mut out = g.matmul(mixed, wo)?;
    if cfg.residual {
        out = g.add(out, x)?;
    }
    if cfg.layer_norm {
        let gamma = g.param(store, &param_name(layer, block, "norm.gamma"))?;
        let beta = g.param(store, &param_name(layer, block, "norm.beta"))?;
        out = g.layer_norm(out, gamma, beta, NORM_EPS)?;
    }
    Ok(out)
}

/// Swaps the patch and slot axes of `[B·A, C, d]` viewed as `[B, A, C, d]`.
fn swap_patch_axes<T: Scalar>(g: &mut Graph<T>, x: Var, batch: usize) -> Result<Var, ModelError> {
    let s = g.shape(x).to_vec();
    let (a, c, d) = (s[0] / batch, s[1], s[2]);
    let x = g.reshape(x, &[batch, a, c, d])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    Ok(g.reshape(x, &[batch * c, a, d])?)
}

/// Depth then breadth (as configured) for every layer over `x: [B·R, P, d]`.
pub fn encode_graph<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    x: Var,
    batch: usize,
    mut trace: Option<&mut AttentionTrace>,
) -> Result<Var, ModelError> {
    if cfg.mix == AttentionMix::Off {
        return Ok(x);
    }
    let mut x = x;
    for layer in 0..cfg.layers {
        if cfg.mix.depth() {
            x = attend_graph(g, store, cfg, x, layer, Block::Depth, trace.as_deref_mut())?;
        }
        if cfg.mix.breadth() {
            let t = swap_patch_axes(g, x, batch)?;
            let t = attend_graph(g, store, cfg, t, layer, Block::Breadth, trace.as_deref_mut())?;
            x = swap_patch_axes(g, t, batch)?;
        }
    }
    Ok(x)
}

fn check_input(x: &Tensor<f64>, cfg: &EncoderConfig) -> Result<(), ModelError> {
    cfg.validate()?;
    if x.rank() != 3 || x.shape()[2] != cfg.width {
        return Err(ModelError::Config(format!("expected [R, P, {}], got {:?}", cfg.width, x.shape())));
    }
    Ok(())
}

/// One depth block of `layer` on `[R, P, d]`.
pub fn depth_attention(x: &Tensor<f64>, store: &ParamStore<f64>, cfg: &EncoderConfig, layer: usize) -> Result<Tensor<f64>, ModelError> {
    check_input(x, cfg)?;
    let mut g = Graph::new();
    let v = g.input(x.clone())?;
    let out = attend_graph(&mut g, store, cfg, v, layer, Block::Depth, None)?;
    Ok(g.value(out).clone())
}

/// One breadth block of `layer` on `[R, P, d]`.
pub fn breadth_attention(x: &Tensor<f64>, store: &ParamStore<f64>, cfg: &EncoderConfig, layer: usize) -> Result<Tensor<f64>, ModelError> {
    check_input(x, cfg)?;
    let mut g = Graph::new();
    let v = g.input(x.clone())?;
    let t = swap_patch_axes(&mut g, v, 1)?;
    let t = attend_graph(&mut g, store, cfg, t, layer, Block::Breadth, None)?;
    let out = swap_patch_axes(&mut g, t, 1)?;
    Ok(g.value(out).clone())
}

/// All layers on `[R, P, d]`.
pub fn encode(x: &Tensor<f64>, store: &ParamStore<f64>, cfg: &EncoderConfig) -> Result<Tensor<f64>, ModelError> {
    check_input(x, cfg)?;
    let mut g = Graph::new();
    let v = g.input(x.clone())?;
    let out = encode_graph(&mut g, store, cfg, v, 1, None)?;
    Ok(g.value(out).clone())
}

/// Writes recorded attention maps to a `PSTA1` sidecar file.
pub fn write_trace<T: Scalar>(path: &Path, g: &Graph<T>, trace: &AttentionTrace) -> io::Result<()> {
    let tensors: Vec<(String, Tensor<T>)> = trace.iter().map(|(n, v)| (n.clone(), g.value(*v).clone())).collect();
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor_list(&mut f, TRACE_MAGIC, &tensors)?;
    io::Write::flush(&mut f)
}
