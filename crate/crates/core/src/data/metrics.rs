use std::fmt;
use std::path::Path;

use super::DataError;
use crate::numerics::Tensor;

/// Targets with `|y|` at or below this are excluded from MAPE.
pub const MAPE_MASK: f64 = 1e-3;

const REPORTED_STEPS: [usize; 3] = [3, 6, 12];

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMetrics {
    /// `"3"`, `"6"`, `"12"` or `"average"`.
    pub horizon: String,
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when every target was masked.
    pub mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<HorizonMetrics>,
}

impl MetricReport {
    pub fn average(&self) -> &HorizonMetrics {
        self.rows.last().expect("report always holds the average row")
    }

    pub fn horizon(&self, step: usize) -> Option<&HorizonMetrics> {
        let key = step.to_string();
        self.rows.iter().find(|r| r.horizon == key)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["horizon", "mae", "rmse", "mape"])?;
        for r in &self.rows {
            w.write_record([
                r.horizon.clone(),
                r.mae.to_string(),
                r.rmse.to_string(),
                r.mape.map_or_else(String::new, |m| m.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>12}{:>12}{:>12}", "horizon", "MAE", "RMSE", "MAPE(%)")?;
        for r in &self.rows {
            let mape = r.mape.map_or_else(|| "n/a".to_string(), |m| format!("{m:.4}"));
            writeln!(f, "{:<10}{:>12.4}{:>12.4}{:>12}", r.horizon, r.mae, r.rmse, mape)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Sums {
    abs: f64,
    sq: f64,
    count: usize,
    pct: f64,
    pct_count: usize,
}

impl Sums {
    fn merge(&mut self, o: &Sums) {
        self.abs += o.abs;
        self.sq += o.sq;
        self.count += o.count;
        self.pct += o.pct;
        self.pct_count += o.pct_count;
    }

    fn finish(&self, horizon: String) -> HorizonMetrics {
        let n = self.count.max(1) as f64;
        HorizonMetrics {
            horizon,
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            mape: (self.pct_count > 0).then(|| 100.0 * self.pct / self.pct_count as f64),
        }
    }
}

/// Streaming per-step error sums over `[F, N]` forecasts.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    steps: Vec<Sums>,
}

impl MetricAccumulator {
    pub fn new(horizon: usize) -> Self {
        Self {
            steps: vec![Sums::default(); horizon],
        }
    }

    pub fn add(&mut self, pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<(), DataError> {
        let f = self.steps.len();
        if pred.shape() != target.shape() || pred.rank() != 2 || pred.shape()[0] != f {
            return Err(DataError::Shape(format!(
                "prediction {:?} and target {:?} must both be [{f}, N]",
                pred.shape(),
                target.shape()
            )));
        }
        let n = pred.shape()[1];
        for (step, sums) in self.steps.iter_mut().enumerate() {
            let p = &pred.data()[step * n..(step + 1) * n];
            let y = &target.data()[step * n..(step + 1) * n];
            for (&p, &y) in p.iter().zip(y) {
                let e = (p - y).abs();
                sums.abs += e;
                sums.sq += e * e;
                sums.count += 1;
                if y.abs() > MAPE_MASK {
                    sums.pct += e / y.abs();
                    sums.pct_count += 1;
                }
            }
        }
        Ok(())
    }

    /// Rows for steps 3, 6 and 12 (those within the horizon) plus the
    /// average over all steps.
    pub fn report(&self) -> MetricReport {
        let mut rows: Vec<HorizonMetrics> = REPORTED_STEPS
            .iter()
            .filter(|&&s| s <= self.steps.len())
            .map(|&s| self.steps[s - 1].finish(s.to_string()))
            .collect();
        let mut all = Sums::default();
        for s in &self.steps {
            all.merge(s);
        }
        let avg = all.finish("average".into());
        for r in rows.iter().chain(std::iter::once(&avg)) {
            if r.mape.is_none() {
                log::warn!("horizon {}: every target is below the MAPE mask; MAPE omitted", r.horizon);
            }
        }
        rows.push(avg);
        MetricReport { rows }
    }
}

/// Metrics over paired `[F, N]` forecast and target streams.
pub fn metrics(preds: &[Tensor<f64>], targets: &[Tensor<f64>]) -> Result<MetricReport, DataError> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(DataError::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut acc = MetricAccumulator::new(preds[0].shape().first().copied().unwrap_or(0));
    for (p, t) in preds.iter().zip(targets) {
        acc.add(p, t)?;
    }
    Ok(acc.report())
}
