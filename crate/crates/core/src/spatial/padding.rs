//! Filling unfull leaves up to capacity.
//!
//! Leaves are visited left to right. A leaf short of `C` members takes its
//! missing slots from the best-scoring points outside its patch that are not
//! already padded somewhere in that patch, so no original index is repeated
//! inside a patch. Scores are computed against the leaf's real members; an
//! empty leaf borrows the members of its nearest non-empty ancestor subtree.

use super::{GeoPoint, LeafKdTree, SpatialError};
use crate::numerics::Tensor;

/// How padded slots are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadStrategy {
    /// Copies of the points whose training series have the highest mean
    /// cosine similarity to the leaf.
    Similarity,
    /// Copies of the geographically closest points (mean Euclidean distance
    /// in degrees).
    Distance,
    /// Zero rows.
    Zero,
}

impl std::str::FromStr for PadStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "similarity" => Ok(Self::Similarity),
            "distance" => Ok(Self::Distance),
            "zero" => Ok(Self::Zero),
            other => Err(format!("unknown pad strategy `{other}` (similarity|distance|zero)")),
        }
    }
}

impl std::fmt::Display for PadStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Similarity => "similarity",
            Self::Distance => "distance",
            Self::Zero => "zero",
        })
    }
}

/// Pad sources per leaf. `None` marks a zero-filled slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PadPlan {
    pub leaves_per_patch: usize,
    pub strategy: PadStrategy,
    pub sources: Vec<Vec<Option<usize>>>,
}

impl PadPlan {
    pub fn pad_count(&self) -> usize {
        self.sources.iter().map(Vec::len).sum()
    }
}

pub(crate) fn check_leaves_per_patch(tree: &LeafKdTree, leaves_per_patch: usize) -> Result<(), SpatialError> {
    if !leaves_per_patch.is_power_of_two() || leaves_per_patch > tree.leaf_count() {
        return Err(SpatialError::LeavesPerPatch {
            leaves_per_patch,
            leaf_count: tree.leaf_count(),
        });
    }
    Ok(())
}

/// Similarity padding from a `[H_train, N]` training-split series matrix.
pub fn pad_assignments(tree: &LeafKdTree, train_series: &Tensor<f64>, leaves_per_patch: usize) -> Result<PadPlan, SpatialError> {
    let shape = train_series.shape();
    if shape.len() != 2 || shape[1] != tree.n_points() {
        return Err(SpatialError::SeriesShape {
            expected_points: tree.n_points(),
            shape: shape.to_vec(),
        });
    }
    let (h, n) = (shape[0], shape[1]);
    // unit-normalised series per point; zero series stay zero so their cosine is 0
    let data = train_series.data();
    let mut unit = vec![0.0; n * h];
    for p in 0..n {
        let norm = (0..h).map(|t| data[t * n + p] * data[t * n + p]).sum::<f64>().sqrt();
        if norm > 0.0 {
            for t in 0..h {
                unit[p * h + t] = data[t * n + p] / norm;
            }
        }
    }
    let unit = &unit;
    let sources = greedy(tree, leaves_per_patch, |members: &[usize]| {
        let mut centroid = vec![0.0; h];
        for &m in members {
            for (c, &u) in centroid.iter_mut().zip(&unit[m * h..(m + 1) * h]) {
                *c += u;
            }
        }
        let k = members.len() as f64;
        centroid.iter_mut().for_each(|c| *c /= k);
        move |cand: usize| {
            unit[cand * h..(cand + 1) * h]
                .iter()
                .zip(&centroid)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        }
    })?;
    Ok(PadPlan {
        leaves_per_patch,
        strategy: PadStrategy::Similarity,
        sources,
    })
}

/// Padding by smallest mean coordinate distance.
pub fn pad_by_distance(tree: &LeafKdTree, points: &[GeoPoint], leaves_per_patch: usize) -> Result<PadPlan, SpatialError> {
    let mut by_index = vec![(0.0, 0.0); tree.n_points()];
    for p in points {
        by_index[p.index] = (p.lat, p.lng);
    }
    let sources = greedy(tree, leaves_per_patch, |members: &[usize]| {
        let members = members.to_vec();
        let by_index = &by_index;
        move |cand: usize| {
            let (la, lo) = by_index[cand];
            let total: f64 = members
                .iter()
                .map(|&m| ((la - by_index[m].0).powi(2) + (lo - by_index[m].1).powi(2)).sqrt())
                .sum();
            -total / members.len() as f64
        }
    })?;
    Ok(PadPlan {
        leaves_per_patch,
        strategy: PadStrategy::Distance,
        sources,
    })
}

/// Zero padding: every missing slot is a zero row.
pub fn pad_with_zeros(tree: &LeafKdTree, leaves_per_patch: usize) -> Result<PadPlan, SpatialError> {
    check_leaves_per_patch(tree, leaves_per_patch)?;
    let c = tree.capacity();
    Ok(PadPlan {
        leaves_per_patch,
        strategy: PadStrategy::Zero,
        sources: tree.leaves().map(|l| vec![None; c - l.len()]).collect(),
    })
}

/// Greedy selection shared by all copy-based strategies. `scorer` builds a
/// per-leaf scoring closure from the reference members; higher is better and
/// ties go to the smaller original index.
fn greedy<'a, F, S>(tree: &LeafKdTree, leaves_per_patch: usize, scorer: F) -> Result<Vec<Vec<Option<usize>>>, SpatialError>
where
    F: Fn(&[usize]) -> S,
    S: Fn(usize) -> f64 + 'a,
{
    check_leaves_per_patch(tree, leaves_per_patch)?;
    let n = tree.n_points();
    let c = tree.capacity();
    let leaf_of = tree.leaf_of_point();
    let mut sources = Vec::with_capacity(tree.leaf_count());
    // points already used as pads inside the current patch
    let mut used_in_patch = vec![false; n];
    for leaf in 0..tree.leaf_count() {
        let patch = leaf / leaves_per_patch;
        if leaf % leaves_per_patch == 0 {
            used_in_patch.iter_mut().for_each(|u| *u = false);
        }
        let members = tree.leaf(leaf);
        let needed = c - members.len();
        if needed == 0 {
            sources.push(Vec::new());
            continue;
        }
        let reference = reference_members(tree, leaf);
        let score = scorer(&reference);
        let mut scored: Vec<(f64, usize)> = (0..n)
            .filter(|&p| leaf_of[p] / leaves_per_patch != patch && !used_in_patch[p])
            .map(|p| (score(p), p))
            .collect();
        if scored.len() < needed {
            return Err(SpatialError::PaddingInfeasible {
                leaf,
                needed,
                available: scored.len(),
            });
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let picked: Vec<Option<usize>> = scored[..needed].iter().map(|&(_, p)| Some(p)).collect();
        for p in picked.iter().flatten() {
            used_in_patch[*p] = true;
        }
        sources.push(picked);
    }
    Ok(sources)
}

/// Real members of the leaf, or of its closest non-empty ancestor.
fn reference_members(tree: &LeafKdTree, leaf: usize) -> Vec<usize> {
    let mut node = tree.leaf_node(leaf);
    loop {
        let pts = tree.subtree_points(node);
        if !pts.is_empty() || node == 0 {
            return pts;
        }
        node = (node - 1) / 2;
    }
}
