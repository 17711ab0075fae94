use super::padding::{check_leaves_per_patch, PadPlan};
use super::{LeafKdTree, SpatialError};
use crate::numerics::Tensor;

/// What occupies one slot of the patched layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Real(usize),
    /// Copy of another point's row.
    Pad(usize),
    /// Zero row.
    Zero,
}

impl Slot {
    /// Original index whose row fills this slot, if any.
    pub fn source(self) -> Option<usize> {
        match self {
            Slot::Real(p) | Slot::Pad(p) => Some(p),
            Slot::Zero => None,
        }
    }

    pub fn is_padded(self) -> bool {
        !matches!(self, Slot::Real(_))
    }
}

/// Slot map from `N` original points to `R` patches of `P` slots.
///
/// Patch `r` holds leaves `r·N_p .. (r+1)·N_p`, each leaf contributing its
/// real members followed by its padded slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayout {
    slots: Vec<Slot>,
    real_slot: Vec<usize>,
    patches: usize,
    patch_size: usize,
    capacity: usize,
    leaves_per_patch: usize,
}

pub fn assemble_patches(tree: &LeafKdTree, plan: &PadPlan) -> Result<PatchLayout, SpatialError> {
    check_leaves_per_patch(tree, plan.leaves_per_patch)?;
    let c = tree.capacity();
    if plan.sources.len() != tree.leaf_count() {
        return Err(SpatialError::PlanMismatch(format!(
            "plan covers {} leaves, tree has {}",
            plan.sources.len(),
            tree.leaf_count()
        )));
    }
    let mut slots = Vec::with_capacity(tree.slot_count());
    for (leaf, (members, pads)) in tree.leaves().zip(&plan.sources).enumerate() {
        if members.len() + pads.len() != c {
            return Err(SpatialError::PlanMismatch(format!(
                "leaf {leaf}: {} members + {} pads != capacity {c}",
                members.len(),
                pads.len()
            )));
        }
        slots.extend(members.iter().map(|&p| Slot::Real(p)));
        slots.extend(pads.iter().map(|s| s.map_or(Slot::Zero, Slot::Pad)));
    }
    let patch_size = c * plan.leaves_per_patch;
    PatchLayout::from_slots(slots, tree.n_points(), patch_size, c, plan.leaves_per_patch)
}

impl PatchLayout {
    /// Builds a layout from an explicit slot list, checking every invariant.
    pub fn from_slots(slots: Vec<Slot>, n_points: usize, patch_size: usize, capacity: usize, leaves_per_patch: usize) -> Result<Self, SpatialError> {
        let bad = |msg: String| Err(SpatialError::PlanMismatch(msg));
        if patch_size == 0 || slots.len() % patch_size != 0 {
            return bad(format!("{} slots do not divide into patches of {patch_size}", slots.len()));
        }
        if patch_size != capacity * leaves_per_patch {
            return bad(format!("P={patch_size} != C·N_p={}", capacity * leaves_per_patch));
        }
        let mut real_slot = vec![usize::MAX; n_points];
        for (s, slot) in slots.iter().enumerate() {
            if let Some(p) = slot.source() {
                if p >= n_points {
                    return bad(format!("slot {s} references point {p} >= N={n_points}"));
                }
            }
            if let Slot::Real(p) = *slot {
                if real_slot[p] != usize::MAX {
                    return bad(format!("point {p} occupies two real slots"));
                }
                real_slot[p] = s;
            }
        }
        if let Some(p) = real_slot.iter().position(|&s| s == usize::MAX) {
            return bad(format!("point {p} has no real slot"));
        }
        for (r, patch) in slots.chunks(patch_size).enumerate() {
            let mut seen: Vec<usize> = patch.iter().filter_map(|s| s.source()).collect();
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("patch {r} repeats an original index"));
            }
        }
        Ok(Self {
            patches: slots.len() / patch_size,
            slots,
            real_slot,
            patch_size,
            capacity,
            leaves_per_patch,
        })
    }

    /// One patch of every point in index order, no padding. Used for dense
    /// all-pairs attention baselines.
    pub fn identity(n: usize) -> Self {
        Self {
            slots: (0..n).map(Slot::Real).collect(),
            real_slot: (0..n).collect(),
            patches: 1,
            patch_size: n,
            capacity: n,
            leaves_per_patch: 1,
        }
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// R
    pub fn patches(&self) -> usize {
        self.patches
    }

    /// P
    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// M = R·P
    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn leaves_per_patch(&self) -> usize {
        self.leaves_per_patch
    }

    pub fn n_points(&self) -> usize {
        self.real_slot.len()
    }

    /// Slot → original index (`None` for zero-filled pads).
    pub fn new_order(&self) -> Vec<Option<usize>> {
        self.slots.iter().map(|s| s.source()).collect()
    }

    pub fn padded_slots(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&s| self.slots[s].is_padded()).collect()
    }

    /// `(slot, source)` for every padded slot.
    pub fn pad_sources(&self) -> Vec<(usize, Option<usize>)> {
        self.padded_slots().into_iter().map(|s| (s, self.slots[s].source())).collect()
    }

    /// The unique real slot of each original index.
    pub fn real_slots(&self) -> &[usize] {
        &self.real_slot
    }

    /// Row indices that gather a `[B·N, d]` matrix into `[B·M, d]`.
    pub fn gather_index(&self, batch: usize) -> Vec<Option<usize>> {
        let n = self.n_points();
        (0..batch)
            .flat_map(|b| self.slots.iter().map(move |s| s.source().map(|p| b * n + p)))
            .collect()
    }

    /// Row indices that pull a `[B·M, d]` matrix back to `[B·N, d]`.
    pub fn unpad_index(&self, batch: usize) -> Vec<Option<usize>> {
        let m = self.slot_count();
        (0..batch)
            .flat_map(|b| self.real_slot.iter().map(move |&s| Some(b * m + s)))
            .collect()
    }
}

/// `[N, d]` → `[R, P, d]`: slot `s` holds row `new_order[s]`.
pub fn apply_layout(layout: &PatchLayout, embeddings: &Tensor<f64>) -> Result<Tensor<f64>, SpatialError> {
    let shape = embeddings.shape();
    if shape.len() != 2 || shape[0] != layout.n_points() {
        return Err(SpatialError::LayoutShape {
            expected: vec![layout.n_points(), 0],
            got: shape.to_vec(),
        });
    }
    let d = shape[1];
    let src = embeddings.data();
    let mut out = Vec::with_capacity(layout.slot_count() * d);
    for slot in layout.slots() {
        match slot.source() {
            Some(p) => out.extend_from_slice(&src[p * d..(p + 1) * d]),
            None => out.extend(std::iter::repeat_n(0.0, d)),
        }
    }
    Ok(Tensor::new(vec![layout.patches(), layout.patch_size(), d], out).expect("sizes consistent"))
}

/// `[R, P, d]` → `[N, d]`, discarding padded slots.
pub fn invert_layout(layout: &PatchLayout, patched: &Tensor<f64>) -> Result<Tensor<f64>, SpatialError> {
    let shape = patched.shape();
    if shape.len() != 3 || shape[0] != layout.patches() || shape[1] != layout.patch_size() {
        return Err(SpatialError::LayoutShape {
            expected: vec![layout.patches(), layout.patch_size(), 0],
            got: shape.to_vec(),
        });
    }
    let d = shape[2];
    let src = patched.data();
    let mut out = Vec::with_capacity(layout.n_points() * d);
    for &s in layout.real_slots() {
        out.extend_from_slice(&src[s * d..(s + 1) * d]);
    }
    Ok(Tensor::new(vec![layout.n_points(), d], out).expect("sizes consistent"))
}
