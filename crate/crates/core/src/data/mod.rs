//! Dataset storage, chronological splits, forecast windows, evaluation
//! metrics and a synthetic generator.

mod dataset;
mod metrics;
mod split;
mod synth;

pub use dataset::{impute_carry_forward, load_dataset, save_dataset, RawDataset, DATASET_MAGIC, META_FILE, POINTS_FILE, VALUES_FILE};
pub use metrics::{metrics, HorizonMetrics, MetricAccumulator, MetricReport, MAPE_MASK};
pub use split::{chronological_split, window_starts, windows, ForecastBatch, SplitRange, Splits};
pub use synth::{synth_generate, SynthSpec};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("ragged payload: {values} values cannot fill a {rows}×{columns} matrix")]
    Ragged { values: f64, rows: usize, columns: usize },
    #[error("coordinate count {coordinates} does not match the {columns} value columns")]
    CoordinateCount { coordinates: usize, columns: usize },
    #[error("bad metadata: {0}")]
    Meta(String),
    #[error("{what} has {len} slices, needs at least {needed}")]
    TooShort { what: &'static str, len: usize, needed: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Global z-score fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    /// Fits mean and population standard deviation; a constant series maps
    /// with unit scale.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::identity();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn normalize_in_place(&self, values: &mut [f64]) {
        for v in values {
            *v = (*v - self.mean) / self.std;
        }
    }

    pub fn denormalize_in_place(&self, values: &mut [f64]) {
        for v in values {
            *v = *v * self.std + self.mean;
        }
    }
}
