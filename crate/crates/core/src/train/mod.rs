//! Parameter initialization, optimization and the epoch loop.

mod ablation;
mod adam;
mod checkpoint;
pub mod init;
mod trainer;

pub use ablation::{ablation_config, random_features, AblatedConfigs, Variant};
pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use trainer::{sample_negatives, EpochRecord, RunResult, Trainer, TrainerConfig};
