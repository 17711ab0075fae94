//! Leaf KD-tree: every point lives in a leaf, internal nodes only carry the
//! splitting hyperplane.
//!
//! The tree is complete. All leaves sit at depth `D = ceil(log2(N / C))`
//! (0 when `N <= C`) and nodes are stored in heap order, so leaf `i` of the
//! last level is node `2^D - 1 + i` and the left-to-right leaf sequence is
//! also the breadth-first order of that level.

use std::cmp::Ordering;

use super::SpatialError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub index: usize,
    pub lat: f64,
    pub lng: f64,
}

impl GeoPoint {
    pub fn new(index: usize, lat: f64, lng: f64) -> Self {
        Self { index, lat, lng }
    }

    pub fn coord(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Lat => self.lat,
            Axis::Lng => self.lng,
        }
    }

    /// Sort key on `axis`: (axis coordinate, other coordinate, index).
    pub fn cmp_on(&self, other: &Self, axis: Axis) -> Ordering {
        self.coord(axis)
            .total_cmp(&other.coord(axis))
            .then_with(|| self.coord(axis.other()).total_cmp(&other.coord(axis.other())))
            .then_with(|| self.index.cmp(&other.index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Lat,
    Lng,
}

impl Axis {
    /// Latitude at the root, alternating with depth.
    pub fn at_depth(depth: u32) -> Self {
        if depth % 2 == 0 {
            Axis::Lat
        } else {
            Axis::Lng
        }
    }

    pub fn other(self) -> Self {
        match self {
            Axis::Lat => Axis::Lng,
            Axis::Lng => Axis::Lat,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KdNode {
    /// `threshold` is `None` for an empty node or when the split is by
    /// position rather than coordinate.
    Split { axis: Axis, threshold: Option<f64> },
    Leaf { points: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafKdTree {
    depth: u32,
    capacity: usize,
    n_points: usize,
    nodes: Vec<KdNode>,
}

/// Smallest `D >= 0` with `capacity * 2^D >= n`.
pub fn tree_depth(n: usize, capacity: usize) -> u32 {
    let mut depth = 0;
    while capacity << depth < n {
        depth += 1;
    }
    depth
}

pub fn build_leaf_kdtree(points: &[GeoPoint], capacity: usize) -> Result<LeafKdTree, SpatialError> {
    validate(points, capacity)?;
    let depth = tree_depth(points.len(), capacity);
    let mut nodes = vec![KdNode::Leaf { points: vec![] }; (1usize << (depth + 1)) - 1];
    // positions into `points`, indexed by original index
    let mut by_index = vec![GeoPoint::new(0, 0.0, 0.0); points.len()];
    for p in points {
        by_index[p.index] = *p;
    }
    let members: Vec<usize> = (0..points.len()).collect();
    split(&by_index, members, 0, 0, depth, &mut nodes);
    Ok(LeafKdTree {
        depth,
        capacity,
        n_points: points.len(),
        nodes,
    })
}

fn split(points: &[GeoPoint], mut members: Vec<usize>, node: usize, level: u32, depth: u32, nodes: &mut [KdNode]) {
    let axis = Axis::at_depth(level);
    members.sort_by(|&a, &b| points[a].cmp_on(&points[b], axis));
    if level == depth {
        nodes[node] = KdNode::Leaf { points: members };
        return;
    }
    let k = members.len() / 2;
    let threshold = match (k, members.len()) {
        (_, 0) => None,
        (0, _) => Some(points[members[0]].coord(axis)),
        _ => {
            let lo = points[members[k - 1]].coord(axis);
            let hi = points[members[k]].coord(axis);
            Some(lo + (hi - lo) / 2.0)
        }
    };
    nodes[node] = KdNode::Split { axis, threshold };
    let right = members.split_off(k);
    split(points, members, 2 * node + 1, level + 1, depth, nodes);
    split(points, right, 2 * node + 2, level + 1, depth, nodes);
}

fn validate(points: &[GeoPoint], capacity: usize) -> Result<(), SpatialError> {
    if points.is_empty() {
        return Err(SpatialError::NoPoints);
    }
    if capacity == 0 {
        return Err(SpatialError::ZeroCapacity);
    }
    let mut seen = vec![false; points.len()];
    for p in points {
        if p.index >= points.len() || std::mem::replace(&mut seen[p.index], true) {
            return Err(SpatialError::BadIndex { index: p.index, n: points.len() });
        }
        if !(-90.0..=90.0).contains(&p.lat) || !(-180.0..=180.0).contains(&p.lng) {
            return Err(SpatialError::BadCoordinate {
                index: p.index,
                lat: p.lat,
                lng: p.lng,
            });
        }
    }
    Ok(())
}

impl LeafKdTree {
    /// Same complete shape, but points are assigned by halving the original
    /// index order instead of by coordinates. Stands in for "no spatial
    /// partitioning" in ablations.
    pub fn from_index_order(n: usize, capacity: usize) -> Result<Self, SpatialError> {
        if n == 0 {
            return Err(SpatialError::NoPoints);
        }
        if capacity == 0 {
            return Err(SpatialError::ZeroCapacity);
        }
        let depth = tree_depth(n, capacity);
        let mut nodes = vec![KdNode::Leaf { points: vec![] }; (1usize << (depth + 1)) - 1];
        fn halve(mut members: Vec<usize>, node: usize, level: u32, depth: u32, nodes: &mut [KdNode]) {
            if level == depth {
                nodes[node] = KdNode::Leaf { points: members };
                return;
            }
            nodes[node] = KdNode::Split {
                axis: Axis::at_depth(level),
                threshold: None,
            };
            let right = members.split_off(members.len() / 2);
            halve(members, 2 * node + 1, level + 1, depth, nodes);
            halve(right, 2 * node + 2, level + 1, depth, nodes);
        }
        halve((0..n).collect(), 0, 0, depth, &mut nodes);
        Ok(Self {
            depth,
            capacity,
            n_points: n,
            nodes,
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    /// Total slots once every leaf is filled to capacity.
    pub fn slot_count(&self) -> usize {
        self.capacity * self.leaf_count()
    }

    pub fn nodes(&self) -> &[KdNode] {
        &self.nodes
    }

    fn first_leaf_node(&self) -> usize {
        self.leaf_count() - 1
    }

    /// Members of leaf `i` (left to right), in construction order.
    pub fn leaf(&self, i: usize) -> &[usize] {
        match &self.nodes[self.first_leaf_node() + i] {
            KdNode::Leaf { points } => points,
            KdNode::Split { .. } => unreachable!("last level holds leaves"),
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.leaf_count()).map(move |i| self.leaf(i))
    }

    /// Concatenation of leaf contents left to right.
    pub fn leaf_order(&self) -> Vec<usize> {
        self.leaves().flatten().copied().collect()
    }

    /// Leaf id for each original index.
    pub fn leaf_of_point(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_points];
        for (leaf, members) in self.leaves().enumerate() {
            for &p in members {
                out[p] = leaf;
            }
        }
        out
    }

    /// Range of leaf ids under heap node `node`.
    pub fn leaf_range(&self, node: usize) -> std::ops::Range<usize> {
        let mut lo = node;
        let mut hi = node;
        while lo < self.first_leaf_node() {
            lo = 2 * lo + 1;
            hi = 2 * hi + 2;
        }
        lo - self.first_leaf_node()..hi - self.first_leaf_node() + 1
    }

    /// All original indices stored under heap node `node`.
    pub fn subtree_points(&self, node: usize) -> Vec<usize> {
        self.leaf_range(node)
            .flat_map(|l| self.leaf(l).iter().copied())
            .collect()
    }

    /// Heap node id of leaf `i`.
    pub fn leaf_node(&self, i: usize) -> usize {
        self.first_leaf_node() + i
    }
}
