//! Training and evaluation orchestration.

mod config;
mod log;
mod trainer;

pub use config::{lr_schedule, DataSource, Partitioner, PatchGeometry, Precision, TrainConfig};
pub use log::{EpochRecord, TrainLog};
pub use trainer::{checkpoint_config, evaluate, leaves_per_patch, load_source, train, without_encoder, Experiment, SplitKind, TrainOutcome};

use crate::data::DataError;
use crate::model::ModelError;
use crate::numerics::CheckpointError;
use crate::spatial::SpatialError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint does not fit the dataset: {0}")]
    Geometry(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },
}

impl From<CheckpointError> for TrainError {
    fn from(e: CheckpointError) -> Self {
        TrainError::Checkpoint(e.to_string())
    }
}

impl From<crate::numerics::TensorError> for TrainError {
    fn from(e: crate::numerics::TensorError) -> Self {
        TrainError::Model(e.into())
    }
}
