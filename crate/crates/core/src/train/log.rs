use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::EarlyStopConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub alpha: f64,
    /// Mean segmentation loss; absent when no segmentation step ran.
    pub seg_loss: Option<f64>,
    pub disc_loss: Option<f64>,
    pub disc_acc: Option<f64>,
    /// Validation Dice of LV, MYO and RV; absent without validation data.
    pub dice: Option<[f64; 3]>,
    pub checkpoint: Option<String>,
}

impl EpochRecord {
    pub fn mean_dice(&self) -> Option<f64> {
        self.dice.map(|d| d.iter().sum::<f64>() / 3.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Epochs strictly increasing and α nondecreasing within phase 3.
    pub fn is_well_formed(&self) -> bool {
        let epochs = self.records.windows(2).all(|w| w[0].epoch < w[1].epoch);
        let alpha = self
            .records
            .windows(2)
            .filter(|w| w[0].phase == 3 && w[1].phase == 3)
            .all(|w| w[0].alpha <= w[1].alpha);
        epochs && alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopChoice {
    pub epoch: usize,
    /// First epoch after which validation Dice stopped improving.
    pub plateau: Option<usize>,
    /// Set when no plateau was found and the last epoch was returned.
    pub warning: bool,
}

/// Pick the phase-3 epoch whose discriminator accuracy is closest to
/// chance (`1/domains`) once validation Dice has plateaued.
///
/// The plateau is the earliest phase-3 epoch `e` with a full window of
/// `window` later records whose best mean Dice exceeds the best mean Dice
/// up to and including `e` by at most `tolerance`. Among epochs from the
/// plateau on, ties in the accuracy gap go to the earliest. Without a
/// plateau, the last epoch is returned with `warning` set. `None` when
/// the log has no phase-3 records.
pub fn early_stop_select(
    log: &TrainingLog,
    domains: usize,
    config: &EarlyStopConfig,
) -> Option<EarlyStopChoice> {
    let recs = &log.records;
    let first3 = recs.iter().position(|r| r.phase == 3)?;
    let last = recs.last()?.epoch;
    let dice = |r: &EpochRecord| r.mean_dice().unwrap_or(f64::NEG_INFINITY);
    let mut best_so_far = f64::NEG_INFINITY;
    let mut plateau = None;
    for (i, r) in recs.iter().enumerate() {
        best_so_far = best_so_far.max(dice(r));
        if i < first3 {
            continue;
        }
        if i + config.window >= recs.len() {
            break;
        }
        let ahead = recs[i + 1..=i + config.window]
            .iter()
            .map(dice)
            .fold(f64::NEG_INFINITY, f64::max);
        if ahead <= best_so_far + config.tolerance {
            plateau = Some(i);
            break;
        }
    }
    let Some(start) = plateau else {
        return Some(EarlyStopChoice {
            epoch: last,
            plateau: None,
            warning: true,
        });
    };
    let chance = 1.0 / domains as f64;
    let mut best: Option<(f64, usize)> = None;
    for r in &recs[start..] {
        let Some(acc) = r.disc_acc else { continue };
        let gap = (acc - chance).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, r.epoch));
        }
    }
    Some(match best {
        Some((_, epoch)) => EarlyStopChoice {
            epoch,
            plateau: Some(recs[start].epoch),
            warning: false,
        },
        None => EarlyStopChoice {
            epoch: last,
            plateau: Some(recs[start].epoch),
            warning: true,
        },
    })
}
