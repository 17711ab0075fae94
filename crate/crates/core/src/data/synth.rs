//! Synthetic traffic with a daily cycle and nearest-neighbour diffusion.
//!
//! `x[n][t] = base[n] + amp[n]·sin(2π·t/N_d + phase[n])
//!          + diffusion · mean_{m ∈ kNN(n)} x[m][t−1] + noise·ε`

use std::f64::consts::TAU;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DataError, RawDataset};
use crate::numerics::Tensor;
use crate::spatial::GeoPoint;

const LAT_ORIGIN: f64 = 34.0;
const LNG_ORIGIN: f64 = -118.5;
const BOX_DEGREES: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub points: usize,
    pub days: usize,
    pub slice_minutes: u32,
    pub k_neighbors: usize,
    pub diffusion: f64,
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 64,
            days: 30,
            slice_minutes: 15,
            k_neighbors: 4,
            diffusion: 0.5,
            noise: 1.0,
        }
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<RawDataset, DataError> {
    if spec.points < 2 || spec.days < 2 {
        return Err(DataError::Malformed(format!(
            "synthetic data needs at least 2 points and 2 days, got {} and {}",
            spec.points, spec.days
        )));
    }
    if spec.slice_minutes == 0 || 1440 % spec.slice_minutes != 0 {
        return Err(DataError::Meta(format!("slice_minutes={} must divide a day", spec.slice_minutes)));
    }
    let n = spec.points;
    let per_day = (1440 / spec.slice_minutes) as usize;
    let t_total = spec.days * per_day;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let unit: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let base: Vec<f64> = (0..n).map(|_| rng.random_range(20.0..60.0)).collect();
    let amp: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..30.0)).collect();
    let phase: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
    let neighbors = nearest(&unit, spec.k_neighbors.min(n - 1));

    let cycle = |p: usize, t: f64| base[p] + amp[p] * (TAU * t / per_day as f64 + phase[p]).sin();
    let mut prev: Vec<f64> = (0..n).map(|p| cycle(p, -1.0)).collect();
    let mut values = Vec::with_capacity(t_total * n);
    for t in 0..t_total {
        let row: Vec<f64> = (0..n)
            .map(|p| {
                let spread = if neighbors[p].is_empty() {
                    0.0
                } else {
                    neighbors[p].iter().map(|&m| prev[m]).sum::<f64>() / neighbors[p].len() as f64
                };
                let eps: f64 = rng.sample(StandardNormal);
                cycle(p, t as f64) + spec.diffusion * spread + spec.noise * eps
            })
            .collect();
        values.extend_from_slice(&row);
        prev = row;
    }

    let points = unit
        .iter()
        .enumerate()
        .map(|(i, &(u, v))| GeoPoint::new(i, LAT_ORIGIN + BOX_DEGREES * u, LNG_ORIGIN + BOX_DEGREES * v))
        .collect();
    let start = NaiveDateTime::parse_from_str("2019-01-01T00:00:00", "%Y-%m-%dT%H:%M:%S").expect("constant timestamp");
    RawDataset::new(Tensor::new(vec![t_total, n], values).expect("sized above"), points, start, spec.slice_minutes)
}

/// `k` nearest other points by Euclidean distance; ties go to the smaller
/// index.
fn nearest(pts: &[(f64, f64)], k: usize) -> Vec<Vec<usize>> {
    (0..pts.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}
