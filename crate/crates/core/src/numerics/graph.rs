//! Dynamic reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so a single reverse sweep over the node list is a valid
//! topological traversal for [`Graph::backward`].

use std::collections::BTreeMap;

use super::kernels;
use super::params::ParamStore;
use super::tensor::{MatmulPlan, Tensor, TensorError};
use super::Scalar;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Which bucket a matrix product's FLOPs are charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopKind {
    /// Dense projections (linear layers).
    Projection,
    /// Attention score and aggregation products (`QKᵀ` and `AV`).
    Mixing,
}

/// Forward-pass multiply-add FLOPs (2 per MAC) recorded by matrix products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCounter {
    pub projection: u64,
    pub mixing: u64,
}

impl FlopCounter {
    pub fn total(&self) -> u64 {
        self.projection + self.mixing
    }
}

enum Op<T: Scalar> {
    Input,
    Param(String),
    MatMul { a: Var, b: Var, plan: MatmulPlan },
    /// `b`'s shape is a suffix of `a`'s and is broadcast over the leading axes.
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    Concat { parts: Vec<Var> },
    SliceLast { a: Var, start: usize },
    Permute { a: Var, perm: Vec<usize> },
    Reshape { a: Var },
    Softmax { a: Var },
    Gather { a: Var, index: Vec<Option<usize>> },
    LayerNorm { a: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    L1 { a: Var, target: Tensor<T> },
    Sum { a: Var },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
    flops: FlopCounter,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients keyed by parameter name.
pub type Gradients<T = f64> = BTreeMap<String, Tensor<T>>;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            flops: FlopCounter::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn flops(&self) -> FlopCounter {
        self.flops
    }

    /// Bytes held by node values on the tape.
    pub fn tape_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.value.numel() * std::mem::size_of::<T>())
            .sum()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var, TensorError> {
        self.push(value, Op::Input, "input")
    }

    /// Binds a named parameter from the store onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var, TensorError> {
        let value = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?
            .clone();
        self.push(value, Op::Param(name.to_string()), "param")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false, FlopKind::Projection)
    }

    /// `a · bᵀ` where `b` is stored `[.., n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true, FlopKind::Projection)
    }

    pub fn matmul_kind(&mut self, a: Var, b: Var, transpose_b: bool, kind: FlopKind) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, transpose_b, kind)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool, kind: FlopKind) -> Result<Var, TensorError> {
        let plan = MatmulPlan::new(self.shape(a), self.shape(b), transpose_b)?;
        let mut out = vec![T::zero(); plan.out_numel()];
        plan.forward(self.value(a).data(), self.value(b).data(), &mut out);
        match kind {
            FlopKind::Projection => self.flops.projection += plan.flops(),
            FlopKind::Mixing => self.flops.mixing += plan.flops(),
        }
        let value = Tensor::new(plan.out_shape.clone(), out)?;
        self.push(value, Op::MatMul { a, b, plan }, "matmul")
    }

    /// Elementwise sum; `b` may be a trailing-suffix shape broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let bd = self.value(b).data();
        let w = bd.len().max(1);
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(w) {
            for (o, &x) in chunk.iter_mut().zip(bd) {
                *o += x;
            }
        }
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(value, Op::Add { a, b }, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(value, Op::Mul { a, b }, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, TensorError> {
        let out = self.value(a).data().iter().map(|&x| x * factor).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(value, Op::Scale { a, factor }, "scale")
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidShape {
            op: "concat",
            shape: vec![],
            reason: "no inputs".into(),
        })?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != *lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(*first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[lead.len()]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Concat { parts: parts.to_vec() }, "concat")
    }

    /// `a[..., start..start+len]`.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let s = self.shape(a).to_vec();
        let w = *s.last().unwrap_or(&1);
        if s.is_empty() || start + len > w || len == 0 {
            return Err(TensorError::InvalidShape {
                op: "slice_last",
                shape: s,
                reason: format!("range {start}..{} out of bounds", start + len),
            });
        }
        let mut out = Vec::with_capacity(self.value(a).numel() / w * len);
        for row in self.value(a).data().chunks(w) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::SliceLast { a, start }, "slice_last")
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let rank = self.shape(a).len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::InvalidShape {
                op: "permute",
                shape: self.shape(a).to_vec(),
                reason: format!("bad permutation {perm:?}"),
            });
        }
        let value = self.value(a).permute(perm);
        self.push(value, Op::Permute { a, perm: perm.to_vec() }, "permute")
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                shape: self.shape(a).to_vec(),
                reason: "rank < 2".into(),
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).reshape(shape)?;
        self.push(value, Op::Reshape { a }, "reshape")
    }

    pub fn softmax_last(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).softmax_last();
        self.push(value, Op::Softmax { a }, "softmax")
    }

    /// Row gather from a rank-2 tensor; `None` yields a zero row.
    pub fn gather_rows(&mut self, a: Var, index: &[Option<usize>]) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "gather_rows",
                shape: s.to_vec(),
                reason: "expected rank 2".into(),
            });
        }
        let (rows, w) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * w);
        for ix in index {
            match *ix {
                Some(r) if r < rows => out.extend_from_slice(&src[r * w..(r + 1) * w]),
                Some(r) => return Err(TensorError::IndexOutOfRange { index: r, rows }),
                None => out.extend(std::iter::repeat_n(T::zero(), w)),
            }
        }
        let value = Tensor::new(vec![index.len(), w], out)?;
        self.push(value, Op::Gather { a, index: index.to_vec() }, "gather_rows")
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let w = self.value(a).last_dim();
        if self.shape(gamma) != [w] || self.shape(beta) != [w] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let eps = T::of(eps);
        let wt = T::of(w as f64);
        let x = self.value(a).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(x.len());
        let mut rstd = Vec::with_capacity(x.len() / w);
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks(w) {
            let mean = row.iter().copied().sum::<T>() / wt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / wt;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(value, Op::LayerNorm { a, gamma, beta, xhat, rstd }, "layer_norm")
    }

    /// Mean absolute difference against a constant target.
    pub fn l1_loss(&mut self, a: Var, target: &Tensor<T>) -> Result<Var, TensorError> {
        if self.shape(a) != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "l1_loss",
                lhs: self.shape(a).to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = T::of(target.numel() as f64);
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        self.push(Tensor::scalar(total / n), Op::L1 { a, target: target.clone() }, "l1_loss")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let total = self.value(a).sum();
        self.push(Tensor::scalar(total), Op::Sum { a }, "sum")
    }

    /// Reverse sweep from a scalar output. Every parameter in `store` gets an
    /// entry; parameters not reached by the graph receive zeros.
    pub fn backward(&self, output: Var, store: &ParamStore<T>) -> Result<Gradients<T>, TensorError> {
        let out_node = &self.nodes[output.0];
        if out_node.value.numel() != 1 {
            return Err(TensorError::NonScalarOutput(out_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);
        let mut param_grads: Gradients<T> = BTreeMap::new();

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Param(name) => {
                    match param_grads.get_mut(name) {
                        Some(acc) => {
                            for (a, &x) in acc.data_mut().iter_mut().zip(&g) {
                                *a += x;
                            }
                        }
                        None => {
                            param_grads.insert(name.clone(), Tensor::new(node.value.shape().to_vec(), g)?);
                        }
                    }
                }
                Op::MatMul { a, b, plan } => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let mut ga = vec![T::zero(); va.len()];
                    let mut gb = vec![T::zero(); vb.len()];
                    plan.backward(va, vb, &g, Some(&mut ga), Some(&mut gb));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add { a, b } => {
                    let wb = self.value(*b).numel().max(1);
                    let mut gb = vec![T::zero(); wb];
                    for chunk in g.chunks(wb) {
                        for (o, &x) in gb.iter_mut().zip(chunk) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let ga = g.iter().zip(vb).map(|(&x, &y)| x * y).collect();
                    let gb = g.iter().zip(va).map(|(&x, &y)| x * y).collect();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale { a, factor } => {
                    let ga = g.iter().map(|&x| x * *factor).collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat { parts } => {
                    let total = node.value.last_dim();
                    let rows = node.value.numel() / total.max(1);
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).last_dim();
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(&mut grads, p, gp);
                        offset += w;
                    }
                }
                Op::SliceLast { a, start } => {
                    let w = self.value(*a).last_dim();
                    let len = node.value.last_dim();
                    let mut ga = vec![T::zero(); self.value(*a).numel()];
                    for (row, src) in ga.chunks_mut(w).zip(g.chunks(len)) {
                        row[*start..*start + len].copy_from_slice(src);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Permute { a, perm } => {
                    let inv = kernels::invert_perm(perm);
                    let (_, ga) = kernels::permute(node.value.shape(), &g, &inv);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Reshape { a } => accumulate(&mut grads, *a, g),
                Op::Softmax { a } => {
                    let y = node.value.data();
                    let w = node.value.last_dim();
                    let mut ga = Vec::with_capacity(y.len());
                    for (yr, gr) in y.chunks(w).zip(g.chunks(w)) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        ga.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather { a, index } => {
                    let w = node.value.last_dim();
                    let mut ga = vec![T::zero(); self.value(*a).numel()];
                    for (i, ix) in index.iter().enumerate() {
                        if let Some(r) = *ix {
                            for (o, &x) in ga[r * w..(r + 1) * w].iter_mut().zip(&g[i * w..(i + 1) * w]) {
                                *o += x;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm { a, gamma, beta, xhat, rstd } => {
                    let w = node.value.last_dim();
                    let gm = self.value(*gamma).data();
                    let wt = T::of(w as f64);
                    let mut ga = Vec::with_capacity(g.len());
                    let mut gg = vec![T::zero(); w];
                    let mut gb = vec![T::zero(); w];
                    for ((gr, hr), &r) in g.chunks(w).zip(xhat.chunks(w)).zip(rstd) {
                        let mut mean_d = T::zero();
                        let mut mean_dh = T::zero();
                        for j in 0..w {
                            let d = gr[j] * gm[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                            gg[j] += gr[j] * hr[j];
                            gb[j] += gr[j];
                        }
                        mean_d /= wt;
                        mean_dh /= wt;
                        for j in 0..w {
                            let d = gr[j] * gm[j];
                            ga.push(r * (d - mean_d - hr[j] * mean_dh));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gb);
                }
                Op::L1 { a, target } => {
                    let n = T::of(target.numel() as f64);
                    let scale = g[0] / n;
                    let ga = self
                        .value(*a)
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&p, &t)| {
                            let d = p - t;
                            // subgradient 0 at an exact tie
                            if d > T::zero() {
                                scale
                            } else if d < T::zero() {
                                -scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum { a } => {
                    let ga = vec![g[0]; self.value(*a).numel()];
                    accumulate(&mut grads, *a, ga);
                }
            }
        }

        let mut out = Gradients::new();
        for (name, value) in store.iter() {
            let grad = param_grads
                .remove(name)
                .unwrap_or_else(|| Tensor::zeros(value.shape()));
            if !grad.is_finite() {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
            out.insert(name.clone(), grad);
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
