use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::phantom::generate_phantom;
use super::preprocess::{preprocess, PreprocessConfig};
use super::sample::{DomainStyle, Sample, Split};
use crate::error::{Error, Result};
use crate::rng::derive;

/// How a domain takes part in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainRole {
    /// Annotated; split into train/val/test.
    Labelled,
    /// Training images without masks.
    Unlabelled,
    /// Annotated, never trained on: every sample goes to the test split.
    HeldOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    pub role: DomainRole,
    pub style: DomainStyle,
    #[serde(default)]
    pub split: SplitFractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub domains: Vec<DomainSpec>,
    pub per_domain: usize,
    pub size: usize,
    pub seed: u64,
    /// Target spacing after resampling, in mm.
    pub spacing: f64,
}

impl GeneratorConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            domains: default_domains(),
            per_domain: 100,
            size: 32,
            seed,
            spacing: 1.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_domain == 0 {
            return Err(Error::Config(
                "per-domain sample count must be positive".into(),
            ));
        }
        if self.size < 32 {
            return Err(Error::Config(format!(
                "image size must be at least 32, got {}",
                self.size
            )));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::Config(format!(
                "target spacing must be positive, got {}",
                self.spacing
            )));
        }
        if self.domains.is_empty() {
            return Err(Error::Config("no domains requested".into()));
        }
        let mut seen = BTreeSet::new();
        for d in &self.domains {
            if d.id.is_empty() || !d.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
                return Err(Error::Config(format!("invalid domain id {:?}", d.id)));
            }
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Config(format!("duplicate domain id {:?}", d.id)));
            }
            d.style.validate()?;
            let f = &d.split;
            if f.train < 0.0 || f.val < 0.0 || f.train + f.val > 1.0 {
                return Err(Error::Config(format!(
                    "invalid split fractions for domain {}",
                    d.id
                )));
            }
        }
        Ok(())
    }
}

/// Four scanners: A and B annotated, C unannotated, D annotated but held
/// out as the unseen domain.
pub fn default_domains() -> Vec<DomainSpec> {
    let spec = |id: &str, role, gain, gamma, noise_sigma, bias_amplitude, spacing| DomainSpec {
        id: id.to_string(),
        role,
        style: DomainStyle {
            gain,
            gamma,
            noise_sigma,
            bias_amplitude,
            bias_smoothness: 1.0,
            spacing,
        },
        split: SplitFractions::default(),
    };
    alloc::vec![
        spec("A", DomainRole::Labelled, 1.0, 1.0, 0.02, 0.10, 1.25),
        spec("B", DomainRole::Labelled, 0.8, 1.5, 0.04, 0.15, 1.0),
        spec("C", DomainRole::Unlabelled, 1.1, 0.7, 0.05, 0.20, 1.1),
        spec("D", DomainRole::HeldOut, 0.9, 0.6, 0.06, 0.30, 0.9),
    ]
}

fn split_for(role: DomainRole, fractions: &SplitFractions, i: usize, n: usize) -> Split {
    match role {
        DomainRole::Unlabelled => Split::Train,
        DomainRole::HeldOut => Split::Test,
        DomainRole::Labelled => {
            let train = libm::round(fractions.train * n as f64) as usize;
            let val = libm::round(fractions.val * n as f64) as usize;
            if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            }
        }
    }
}

/// Generate and preprocess every sample of every domain. Each phantom is
/// rendered at its domain's acquisition spacing over the same field of
/// view, then resampled, cropped and normalized. Sample `i` of domain `d`
/// uses seed `derive(seed, [d, i])`, so output is independent of order.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let pre = PreprocessConfig {
        spacing: config.spacing,
        size: config.size,
    };
    let mut out = Vec::with_capacity(config.domains.len() * config.per_domain);
    for (d, spec) in config.domains.iter().enumerate() {
        let render = libm::round(config.size as f64 * config.spacing / spec.style.spacing).max(32.0)
            as usize;
        for i in 0..config.per_domain {
            let seed = derive(config.seed, &[d as u64, i as u64]);
            let mut sample = preprocess(&generate_phantom(seed, &spec.style, render), &pre)?;
            sample.id = format!("{}_{i:04}", spec.id);
            sample.domain_id = spec.id.clone();
            sample.split = split_for(spec.role, &spec.split, i, config.per_domain);
            if spec.role == DomainRole::Unlabelled {
                sample.mask = None;
            }
            out.push(sample);
        }
    }
    Ok(out)
}
