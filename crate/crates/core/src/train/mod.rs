//! Supervised training, evaluation and checkpoints.

mod checkpoint;
mod config;
mod history;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointMeta, VERSION as CHECKPOINT_VERSION};
pub use config::{DataSource, Precision, RunConfig, TrainConfig};
pub use history::{read_history, write_history, EpochMetrics};
pub use trainer::{evaluate, predict, prepare_all, FitSummary, Trainer, BEST_CHECKPOINT, HISTORY_FILE, LAST_CHECKPOINT};
