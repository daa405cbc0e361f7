use alloc::format;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentPolicy, ClaheConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    /// Segmentation, discrimination and adversarial steps.
    Adversarial,
    /// Segmentation steps only, on the same schedule.
    Baseline,
}

/// Update rule of the adversarial ascent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversarialOptimizer {
    /// `ϑ ← ϑ + α·λ·∂L_D/∂ϑ`.
    Plain,
    /// ADAM ascent with its own moment estimates.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    /// Epochs after a candidate that must not improve validation Dice.
    pub window: usize,
    /// Improvement below this counts as none.
    pub tolerance: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            window: 10,
            tolerance: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub mode: TrainingMode,
    /// Epochs of segmenter pre-training, discriminator pre-training and
    /// joint training.
    pub phase_epochs: [usize; 3],
    /// Epochs over which α rises from 0 to 1 at the start of phase 3.
    pub alpha_ramp: usize,
    pub seg_lr_pretrain: f64,
    pub seg_lr_joint: f64,
    pub disc_lr_pretrain: f64,
    pub disc_lr_joint: f64,
    pub seg_batch: usize,
    pub disc_batch: usize,
    pub adam: AdamConfig,
    pub adversarial_optimizer: AdversarialOptimizer,
    pub seed: u64,
    pub early_stop: EarlyStopConfig,
    pub augment: AugmentPolicy,
    pub clahe: Option<ClaheConfig>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainerConfig {
    pub fn full_scale() -> Self {
        Self {
            mode: TrainingMode::Adversarial,
            phase_epochs: [150, 150, 150],
            alpha_ramp: 150,
            seg_lr_pretrain: 1e-4,
            seg_lr_joint: 1e-3,
            disc_lr_pretrain: 1e-3,
            disc_lr_joint: 1e-4,
            seg_batch: 16,
            disc_batch: 20,
            adam: AdamConfig::default(),
            adversarial_optimizer: AdversarialOptimizer::Plain,
            seed: 0,
            early_stop: EarlyStopConfig::default(),
            augment: AugmentPolicy::full_scale(),
            clahe: Some(ClaheConfig::default()),
        }
    }

    /// Shorter schedule and smaller augmentation for 32 × 32 inputs.
    pub fn desk() -> Self {
        Self {
            phase_epochs: [20, 20, 40],
            alpha_ramp: 40,
            augment: AugmentPolicy::desk(),
            clahe: Some(ClaheConfig {
                tiles: 4,
                ..ClaheConfig::default()
            }),
            ..Self::full_scale()
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.phase_epochs.iter().sum()
    }

    pub fn joint_start(&self) -> usize {
        self.phase_epochs[0] + self.phase_epochs[1]
    }

    /// Phase (1, 2 or 3) of a zero-based epoch; epochs past the schedule
    /// belong to phase 3.
    pub fn phase_of(&self, epoch: usize) -> u8 {
        if epoch < self.phase_epochs[0] {
            1
        } else if epoch < self.joint_start() {
            2
        } else {
            3
        }
    }

    /// Adversarial weight: 0 before phase 3, then a linear ramp to 1.
    pub fn alpha(&self, epoch: usize) -> f64 {
        let start = self.joint_start();
        if epoch < start {
            return 0.0;
        }
        ((epoch - start) as f64 / self.alpha_ramp as f64).clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.seg_lr_pretrain,
            self.seg_lr_joint,
            self.disc_lr_pretrain,
            self.disc_lr_joint,
        ];
        if rates.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::Config(format!(
                "learning rates must be positive, got {rates:?}"
            )));
        }
        if self.phase_epochs.contains(&0) {
            return Err(Error::Config(format!(
                "phase lengths must be at least 1, got {:?}",
                self.phase_epochs
            )));
        }
        if self.alpha_ramp == 0 || self.alpha_ramp > self.phase_epochs[2] {
            return Err(Error::Config(format!(
                "alpha ramp {} must lie in 1..={}",
                self.alpha_ramp, self.phase_epochs[2]
            )));
        }
        if self.seg_batch < 2 || self.disc_batch < 2 {
            return Err(Error::Config("batch sizes must be at least 2".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config(format!("invalid ADAM settings {a:?}")));
        }
        if self.early_stop.window == 0 || !(self.early_stop.tolerance >= 0.0) {
            return Err(Error::Config(
                "early-stop window must be positive and tolerance non-negative".into(),
            ));
        }
        Ok(())
    }
}
