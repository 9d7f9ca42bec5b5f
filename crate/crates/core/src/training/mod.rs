//! Windowed datasets, losses and metrics, Adam, the epoch loop and
//! checkpoints.

mod adam;
mod checkpoint;
mod config;
mod dataset;
mod fit;
mod objective;

pub use adam::{adam_update, Adam, AdamConfig, Moments};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{reference_runs, ReferenceRun, TrainConfig};
pub use dataset::{sliding_windows, Batch, Source, Targets, WindowDataset};
pub use fit::{evaluate, fit, EpochRecord, History};
pub use objective::{accuracy, argmax, loss, mae, metric, LossKind, MetricKind};
