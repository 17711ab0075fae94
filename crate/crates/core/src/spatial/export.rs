//! Partition reports: a GeoJSON FeatureCollection with one feature per
//! original point, plus leaf and patch CSV summaries.

use std::io;
use std::path::Path;

use serde_json::{json, Value};

use super::{GeoPoint, LeafKdTree, PatchLayout, Slot};

#[derive(Debug, Clone, PartialEq)]
pub struct LeafRow {
    pub leaf_id: usize,
    pub patch_id: usize,
    pub size_before_pad: usize,
    /// `None` entries are zero-filled slots.
    pub pad_sources: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRow {
    pub patch_id: usize,
    pub occupancy: usize,
    pub real: usize,
    pub padded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub geojson: Value,
    pub leaves: Vec<LeafRow>,
    pub patches: Vec<PatchRow>,
}

pub fn export_partition(tree: &LeafKdTree, layout: &PatchLayout, points: &[GeoPoint]) -> PartitionReport {
    let c = layout.capacity();
    let np = layout.leaves_per_patch();
    let leaf_of = tree.leaf_of_point();

    let mut leaves = Vec::with_capacity(tree.leaf_count());
    let mut padded_into: Vec<Vec<usize>> = vec![Vec::new(); tree.n_points()];
    for (leaf_id, chunk) in layout.slots().chunks(c).enumerate() {
        let pads: Vec<Option<usize>> = chunk
            .iter()
            .filter(|s| s.is_padded())
            .map(|s| s.source())
            .collect();
        for p in pads.iter().flatten() {
            padded_into[*p].push(leaf_id);
        }
        leaves.push(LeafRow {
            leaf_id,
            patch_id: leaf_id / np,
            size_before_pad: chunk.iter().filter(|s| matches!(s, Slot::Real(_))).count(),
            pad_sources: pads,
        });
    }

    let patches = layout
        .slots()
        .chunks(layout.patch_size())
        .enumerate()
        .map(|(patch_id, chunk)| {
            let real = chunk.iter().filter(|s| !s.is_padded()).count();
            PatchRow {
                patch_id,
                occupancy: chunk.len(),
                real,
                padded: chunk.len() - real,
            }
        })
        .collect();

    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.index);
    let features: Vec<Value> = sorted
        .iter()
        .map(|p| {
            let leaf = leaf_of[p.index];
            json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [p.lng, p.lat] },
                "properties": {
                    "index": p.index,
                    "leaf_id": leaf,
                    "patch_id": leaf / np,
                    "slot": layout.real_slots()[p.index],
                    "padded_into_leaves": padded_into[p.index],
                }
            })
        })
        .collect();
    let geojson = json!({ "type": "FeatureCollection", "features": features });

    PartitionReport { geojson, leaves, patches }
}

impl PartitionReport {
    /// Writes `partition.geojson`, `leaves.csv` and `patches.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("partition.geojson"),
            serde_json::to_string_pretty(&self.geojson).map_err(io::Error::other)?,
        )?;

        let mut w = csv::Writer::from_path(dir.join("leaves.csv"))?;
        w.write_record(["leaf_id", "patch_id", "size_before_pad", "pad_source_indices"])?;
        for row in &self.leaves {
            let pads = row
                .pad_sources
                .iter()
                .map(|s| s.map_or_else(|| "zero".to_string(), |p| p.to_string()))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                row.leaf_id.to_string(),
                row.patch_id.to_string(),
                row.size_before_pad.to_string(),
                pads,
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("patches.csv"))?;
        w.write_record(["patch_id", "occupancy", "real", "padded"])?;
        for row in &self.patches {
            w.write_record([row.patch_id, row.occupancy, row.real, row.padded].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}
