//! Staged domain-adversarial training: segmentation descent, discriminator
//! descent and gradient-reversal ascent on the segmenter's convolutions.

mod batch;
mod config;
mod log;
mod optim;
mod steps;
mod trainer;

pub use batch::{DomainBatch, SegBatch};
pub use config::{AdamConfig, AdversarialOptimizer, EarlyStopConfig, TrainerConfig, TrainingMode};
pub use log::{early_stop_select, EarlyStopChoice, EpochRecord, TrainingLog};
pub use optim::{sgd_step, AdamState, Direction, Moments};
pub use steps::{adversarial_step, disc_step, domain_loss, seg_step, DiscOutcome, Model};
pub use trainer::{StepKind, StepStage, Trainer, TrainerState};

#[cfg(test)]
mod tests;
