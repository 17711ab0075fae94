//! Leaf KD-tree partitioning of sensor coordinates and the padded patch
//! layout built on top of it.

mod export;
mod kdtree;
mod layout;
mod padding;

pub use export::{export_partition, LeafRow, PartitionReport, PatchRow};
pub use kdtree::{build_leaf_kdtree, tree_depth, Axis, GeoPoint, KdNode, LeafKdTree};
pub use layout::{apply_layout, assemble_patches, invert_layout, PatchLayout, Slot};
pub use padding::{pad_assignments, pad_by_distance, pad_with_zeros, PadPlan, PadStrategy};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpatialError {
    #[error("cannot partition an empty point set")]
    NoPoints,
    #[error("leaf capacity must be at least 1")]
    ZeroCapacity,
    #[error("point index {index} is duplicated or outside 0..{n}")]
    BadIndex { index: usize, n: usize },
    #[error("point {index} has out-of-range coordinates ({lat}, {lng})")]
    BadCoordinate { index: usize, lat: f64, lng: f64 },
    #[error("leaves per patch must be a power of 2 no larger than the leaf count {leaf_count}, got {leaves_per_patch}")]
    LeavesPerPatch { leaves_per_patch: usize, leaf_count: usize },
    #[error("leaf {leaf} needs {needed} pad(s) but only {available} point(s) outside its patch are unused; patch size exceeds the point count")]
    PaddingInfeasible { leaf: usize, needed: usize, available: usize },
    #[error("training series must be [H, {expected_points}], got {shape:?}")]
    SeriesShape { expected_points: usize, shape: Vec<usize> },
    #[error("layout shape mismatch: expected {expected:?} (0 = any), got {got:?}")]
    LayoutShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("inconsistent layout: {0}")]
    PlanMismatch(String),
}

/// Builds the full layout in one call.
pub fn build_layout(
    points: &[GeoPoint],
    train_series: &crate::numerics::Tensor<f64>,
    capacity: usize,
    leaves_per_patch: usize,
    strategy: PadStrategy,
) -> Result<(LeafKdTree, PatchLayout), SpatialError> {
    let tree = build_leaf_kdtree(points, capacity)?;
    let layout = layout_for_tree(&tree, points, train_series, leaves_per_patch, strategy)?;
    Ok((tree, layout))
}

pub fn layout_for_tree(
    tree: &LeafKdTree,
    points: &[GeoPoint],
    train_series: &crate::numerics::Tensor<f64>,
    leaves_per_patch: usize,
    strategy: PadStrategy,
) -> Result<PatchLayout, SpatialError> {
    let plan = match strategy {
        PadStrategy::Similarity => pad_assignments(tree, train_series, leaves_per_patch)?,
        PadStrategy::Distance => pad_by_distance(tree, points, leaves_per_patch)?,
        PadStrategy::Zero => pad_with_zeros(tree, leaves_per_patch)?,
    };
    assemble_patches(tree, &plan)
}
