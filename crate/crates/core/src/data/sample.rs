use alloc::string::String;

use serde::{Deserialize, Serialize};

use super::grid::{Image, LabelMap};
use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const LV: u8 = 1;
pub const MYO: u8 = 2;
pub const RV: u8 = 3;
pub const CLASS_NAMES: [&str; 4] = ["background", "lv", "myo", "rv"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One 2D slice. `mask` holds one label per pixel (see [`LV`], [`MYO`],
/// [`RV`]); unlabelled samples have no mask but always a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: Option<LabelMap>,
    pub domain_id: String,
    /// `(row, column)` pixel spacing in mm.
    pub spacing: (f64, f64),
    pub split: Split,
}

impl Sample {
    pub fn is_labelled(&self) -> bool {
        self.mask.is_some()
    }
}

/// Acquisition characteristics of one simulated scanner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub gain: f64,
    /// Exponent applied to the anatomical intensity; `< 1` brightens,
    /// `> 1` darkens mid-tones.
    pub gamma: f64,
    pub noise_sigma: f64,
    /// Peak relative amplitude of the multiplicative bias field.
    pub bias_amplitude: f64,
    /// Bias-field wavelength as a fraction of the field of view.
    pub bias_smoothness: f64,
    /// Isotropic acquisition pixel spacing in mm.
    pub spacing: f64,
}

impl Default for DomainStyle {
    fn default() -> Self {
        Self {
            gain: 1.0,
            gamma: 1.0,
            noise_sigma: 0.0,
            bias_amplitude: 0.0,
            bias_smoothness: 1.0,
            spacing: 1.25,
        }
    }
}

impl DomainStyle {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gain > 0.0
            && self.gamma > 0.0
            && self.noise_sigma >= 0.0
            && self.bias_amplitude >= 0.0
            && self.bias_smoothness > 0.0
            && self.spacing > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!(
                "invalid domain style {self:?}"
            )))
        }
    }
}
