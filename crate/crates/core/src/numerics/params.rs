use std::collections::BTreeMap;

use super::graph::Gradients;
use super::tensor::{Tensor, TensorError};
use super::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Slot<T: Scalar> {
    pub value: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Named learnable tensors plus AdamW moment state.
///
/// Iteration order is by name, which keeps checkpoints and reductions
/// deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar = f64> {
    slots: BTreeMap<String, Slot<T>>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            slots: BTreeMap::new(),
            step: 0,
        }
    }

    /// Inserts (or replaces) a parameter with fresh zero moments.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.slots.insert(name.to_string(), Slot { value, m, v });
    }

    pub(crate) fn insert_slot(&mut self, name: String, slot: Slot<T>) {
        self.slots.insert(name, slot);
    }

    pub(crate) fn slots(&self) -> impl Iterator<Item = (&String, &Slot<T>)> {
        self.slots.iter()
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.slots.iter().map(|(k, s)| (k, &s.value))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.slots.keys()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.slots.values().map(|s| s.value.numel()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.slots.get(name).map(|s| &s.m)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.slots.get(name).map(|s| &s.v)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            slots: self
                .slots
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        Slot {
                            value: s.value.cast(),
                            m: s.m.cast(),
                            v: s.v.cast(),
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }

    /// One decoupled-weight-decay Adam update.
    ///
    /// Every gradient is validated before any parameter is touched, so a
    /// non-finite gradient leaves the store unchanged.
    pub fn adamw_step(&mut self, grads: &Gradients<T>, opt: &AdamW) -> Result<(), TensorError> {
        for (name, slot) in &self.slots {
            let g = grads
                .get(name)
                .ok_or_else(|| TensorError::UnknownParameter(name.clone()))?;
            if g.shape() != slot.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw_step",
                    lhs: slot.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(opt.beta1), T::of(opt.beta2));
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let (lr, wd, eps) = (T::of(opt.lr), T::of(opt.weight_decay), T::of(opt.eps));
        let decay = T::one() - lr * wd;
        for (name, slot) in self.slots.iter_mut() {
            let g = grads[name].data();
            let (p, m, v) = (slot.value.data_mut(), slot.m.data_mut(), slot.v.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// AdamW hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 0.002,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamW {
    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
