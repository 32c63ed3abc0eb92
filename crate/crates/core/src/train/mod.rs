//! Run configuration, optimization, checkpoints and experiment drivers.

mod config;
pub mod experiments;
mod optim;
mod trainer;

pub use config::{DataConfig, DecodeConfig, DecodeMode, OptimizerConfig, RunConfig, TrainingConfig};
pub use optim::{clip_global_norm, global_norm, learning_rate, Adam};
pub use trainer::{
    batch_loss, decode_posteriorgram, describe, is_feasible, load_dataset, Dataset, EpochAccum, EpochMetrics,
    Evaluation, Progress, StepStats, Trainer, CHECKPOINT_KIND,
};

#[cfg(test)]
mod tests;
