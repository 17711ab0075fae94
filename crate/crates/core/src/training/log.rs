use std::path::Path;

use crate::data::DataError;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean training L1 (normalised units) over the epoch's batches.
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_mape: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// Equality on everything except wall-clock time.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.lr.to_bits() == b.lr.to_bits()
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_mae.to_bits() == b.val_mae.to_bits()
                    && a.val_rmse.to_bits() == b.val_rmse.to_bits()
                    && a.val_mape.map(f64::to_bits) == b.val_mape.map(f64::to_bits)
            })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "lr", "train_loss", "val_mae", "val_rmse", "val_mape", "seconds"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.lr.to_string(),
                r.train_loss.to_string(),
                r.val_mae.to_string(),
                r.val_rmse.to_string(),
                r.val_mape.map_or_else(String::new, |m| m.to_string()),
                format!("{:.3}", r.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
