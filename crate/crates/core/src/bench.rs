//! Attention-cost benchmark: one dual (depth + breadth) layer over a patched
//! layout against one dense all-pairs layer over the same slots.
//!
//! Both variants run through the same graph kernels, so the difference in
//! time and counted FLOPs comes from the attention pattern alone. Timings are
//! medians over `repeats` runs after one discarded warm-up run.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::attention::encode_graph;
use crate::model::{AttentionMix, EncoderConfig, ModelError};
use crate::numerics::{Graph, ParamStore, Tensor, TensorError};
use crate::spatial::{build_leaf_kdtree, pad_by_distance, assemble_patches, GeoPoint, SpatialError};
use crate::training::{leaves_per_patch, PatchGeometry, TrainError};

/// FLOPs charged per `(group, query, key, channel)` term of a mixing
/// product pair: two products (`QKᵀ` and `AV`) at two FLOPs per MAC.
pub const MIXING_FLOPS_PER_TERM: u64 = 4;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark settings: {0}")]
    Config(String),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Patched,
    Full,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Patched => "patched",
            Variant::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: Variant,
    pub points: usize,
    pub capacity: usize,
    pub leaves_per_patch: usize,
    pub patches: usize,
    pub patch_size: usize,
    pub slots: usize,
    pub width: usize,
    pub forward_ms: Option<f64>,
    pub backward_ms: Option<f64>,
    /// Attention mixing FLOPs of one forward pass, from the graph counter.
    pub flops_counted: Option<u64>,
    /// Bytes held on the tape after the forward pass.
    pub peak_alloc_bytes: Option<usize>,
    /// Set when the row was skipped or aborted.
    pub failure: Option<String>,
}

impl BenchRow {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    /// Point counts, strictly ascending.
    pub sizes: Vec<usize>,
    pub width: usize,
    pub heads: usize,
    pub capacity: usize,
    pub geometry: PatchGeometry,
    pub repeats: usize,
    pub seed: u64,
    /// Rows whose estimated tape footprint exceeds this are marked failed.
    pub memory_limit_bytes: usize,
    pub backward: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            sizes: vec![1024, 2048, 4096],
            width: 32,
            heads: 1,
            capacity: 2,
            geometry: PatchGeometry::LeavesPerPatch(128),
            repeats: 3,
            seed: 0,
            memory_limit_bytes: 3 << 30,
            backward: true,
        }
    }
}

/// Mixing FLOPs of one dual layer on an `R × P` layout of width `d`.
pub fn dual_layer_cost(patches: usize, patch_size: usize, width: usize) -> u64 {
    let (r, p, d) = (patches as u64, patch_size as u64, width as u64);
    MIXING_FLOPS_PER_TERM * (r * p * p * d + p * r * r * d)
}

/// Mixing FLOPs of one dense layer over `M` slots.
pub fn dense_layer_cost(slots: usize, width: usize) -> u64 {
    let (m, d) = (slots as u64, width as u64);
    MIXING_FLOPS_PER_TERM * m * m * d
}

/// Rough upper bound on the bytes a forward plus backward pass holds for
/// attention over `groups` sequences of length `len`.
pub fn estimated_bytes(groups: usize, len: usize, width: usize, heads: usize) -> usize {
    let linear = 16 * groups * len * width;
    let maps = 3 * heads * groups * len * len;
    2 * std::mem::size_of::<f64>() * (linear + maps)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

struct Timing {
    forward_ms: f64,
    backward_ms: Option<f64>,
    mixing_flops: u64,
    tape_bytes: usize,
}

fn run_once(store: &ParamStore<f64>, cfg: &EncoderConfig, input: &Tensor<f64>, backward: bool) -> Result<Timing, BenchError> {
    let mut g = Graph::new();
    let clock = Instant::now();
    let x = g.input(input.clone())?;
    let out = encode_graph(&mut g, store, cfg, x, 1, None)?;
    let forward_ms = clock.elapsed().as_secs_f64() * 1e3;
    let tape_bytes = g.tape_bytes();
    let backward_ms = if backward {
        let clock = Instant::now();
        let total = g.sum(out)?;
        std::hint::black_box(g.backward(total, store)?);
        Some(clock.elapsed().as_secs_f64() * 1e3)
    } else {
        None
    };
    Ok(Timing {
        forward_ms,
        backward_ms,
        mixing_flops: g.flops().mixing,
        tape_bytes,
    })
}

/// A row ready to time: its weights and input are fixed up front.
struct Case {
    cfg: EncoderConfig,
    store: ParamStore<f64>,
    input: Tensor<f64>,
    forward: Vec<f64>,
    backward: Vec<f64>,
}

impl Case {
    fn new(spec: &BenchSpec, row: &BenchRow, mix: AttentionMix, rng: &mut ChaCha8Rng) -> Result<Self, BenchError> {
        let cfg = EncoderConfig {
            layers: 1,
            heads: spec.heads,
            width: spec.width,
            residual: true,
            layer_norm: true,
            mix,
        };
        cfg.validate()?;
        let mut store = ParamStore::new();
        cfg.init(&mut store, rng);
        let input = Tensor::uniform(&[row.patches, row.patch_size, spec.width], 1.0, rng);
        Ok(Self {
            cfg,
            store,
            input,
            forward: Vec::with_capacity(spec.repeats),
            backward: Vec::with_capacity(spec.repeats),
        })
    }

    fn run(&mut self, backward: bool, row: &mut BenchRow) -> Result<(), BenchError> {
        let t = run_once(&self.store, &self.cfg, &self.input, backward)?;
        self.forward.push(t.forward_ms);
        self.backward.extend(t.backward_ms);
        row.flops_counted = Some(t.mixing_flops);
        row.peak_alloc_bytes = Some(t.tape_bytes);
        Ok(())
    }
}

fn geometry_rows(spec: &BenchSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<[BenchRow; 2], BenchError> {
    let points: Vec<GeoPoint> = (0..n).map(|i| GeoPoint::new(i, rng.random::<f64>(), rng.random::<f64>())).collect();
    let tree = build_leaf_kdtree(&points, spec.capacity)?;
    let np = leaves_per_patch(spec.geometry, tree.leaf_count())?;
    let layout = assemble_patches(&tree, &pad_by_distance(&tree, &points, np)?)?;

    let patched = BenchRow {
        variant: Variant::Patched,
        points: n,
        capacity: spec.capacity,
        leaves_per_patch: np,
        patches: layout.patches(),
        patch_size: layout.patch_size(),
        slots: layout.slot_count(),
        width: spec.width,
        forward_ms: None,
        backward_ms: None,
        flops_counted: None,
        peak_alloc_bytes: None,
        failure: None,
    };
    let full = BenchRow {
        variant: Variant::Full,
        leaves_per_patch: tree.leaf_count(),
        patches: 1,
        patch_size: layout.slot_count(),
        ..patched.clone()
    };
    Ok([patched, full])
}

fn fail(row: &mut BenchRow, case: &mut Option<Case>, reason: String) {
    log::warn!("{} N={}: {reason}", row.variant, row.points);
    row.failure = Some(reason);
    row.flops_counted = None;
    row.peak_alloc_bytes = None;
    *case = None;
}

/// Runs both variants for every size. A size whose geometry cannot be built
/// is an error; a row that cannot run is reported as failed.
///
/// Repeats are interleaved across rows (one warm-up pass, then `repeats`
/// timed passes over every row) so that slow periods on a shared machine
/// affect all sizes alike.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>, BenchError> {
    if spec.sizes.is_empty() || spec.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::Config(format!("sizes must be non-empty and strictly ascending, got {:?}", spec.sizes)));
    }
    if spec.repeats == 0 {
        return Err(BenchError::Config("repeats must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(2 * spec.sizes.len());
    let mut cases = Vec::with_capacity(2 * spec.sizes.len());
    for &n in &spec.sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(n as u64));
        for mut row in geometry_rows(spec, n, &mut rng)? {
            let (mix, estimate) = match row.variant {
                Variant::Patched => (
                    AttentionMix::Dual,
                    estimated_bytes(row.patches, row.patch_size, spec.width, spec.heads)
                        + estimated_bytes(row.patch_size, row.patches, spec.width, spec.heads),
                ),
                Variant::Full => (AttentionMix::DepthOnly, estimated_bytes(1, row.slots, spec.width, spec.heads)),
            };
            let mut case = None;
            if estimate > spec.memory_limit_bytes {
                fail(&mut row, &mut case, format!("estimated {estimate} bytes exceeds the {} byte limit", spec.memory_limit_bytes));
            } else {
                match Case::new(spec, &row, mix, &mut rng) {
                    Ok(c) => case = Some(c),
                    Err(e) => fail(&mut row, &mut case, e.to_string()),
                }
            }
            rows.push(row);
            cases.push(case);
        }
    }

    for pass in 0..=spec.repeats {
        for (row, case) in rows.iter_mut().zip(cases.iter_mut()) {
            let Some(c) = case.as_mut() else { continue };
            if let Err(e) = c.run(spec.backward, row) {
                fail(row, case, e.to_string());
            } else if pass == 0 {
                c.forward.clear();
                c.backward.clear();
            }
        }
    }
    for (row, case) in rows.iter_mut().zip(cases) {
        if let Some(c) = case {
            row.forward_ms = Some(median(c.forward));
            row.backward_ms = (!c.backward.is_empty()).then(|| median(c.backward));
        }
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "variant",
        "n",
        "capacity",
        "leaves_per_patch",
        "patches",
        "patch_size",
        "slots",
        "width",
        "forward_ms",
        "backward_ms",
        "flops_counted",
        "peak_alloc_bytes",
        "status",
    ])?;
    fn opt<T: ToString>(v: Option<T>) -> String {
        v.map_or_else(String::new, |v| v.to_string())
    }
    for r in rows {
        w.write_record([
            r.variant.to_string(),
            r.points.to_string(),
            r.capacity.to_string(),
            r.leaves_per_patch.to_string(),
            r.patches.to_string(),
            r.patch_size.to_string(),
            r.slots.to_string(),
            r.width.to_string(),
            opt(r.forward_ms.map(|v| format!("{v:.3}"))),
            opt(r.backward_ms.map(|v| format!("{v:.3}"))),
            opt(r.flops_counted),
            opt(r.peak_alloc_bytes),
            r.failure.clone().map_or_else(|| "ok".to_string(), |f| format!("failed: {f}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}
