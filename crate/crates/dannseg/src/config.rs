//! Run configuration: defaults, then `DANNSEG_SEED`, then a JSON file,
//! then command-line flags.

use std::fs;
use std::path::Path;

use dannseg_core::data::Split;
use dannseg_core::metrics::{MwMethod, ProbeConfig};
use dannseg_core::nn::{DiscriminatorConfig, UNetConfig};
use dannseg_core::train::TrainerConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "DANNSEG_SEED";

/// Floating-point type of training and of checkpoint payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub split: Split,
    pub mann_whitney: MwMethod,
    pub probe: ProbeConfig,
    /// Domains the probe separates; all domains in the data when absent.
    pub probe_domains: Option<Vec<String>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            mann_whitney: MwMethod::Auto,
            probe: ProbeConfig::default(),
            probe_domains: None,
        }
    }
}

/// Everything a run depends on. `seed` is authoritative and is copied into
/// `trainer.seed` on resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub trainer: TrainerConfig,
    pub unet: UNetConfig,
    pub discriminator: DiscriminatorConfig,
    pub eval: EvalOptions,
    /// Save a per-epoch checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            trainer: TrainerConfig::desk(),
            unet: UNetConfig::desk(),
            discriminator: DiscriminatorConfig::default(),
            eval: EvalOptions::default(),
            checkpoint_every: 1,
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `DANNSEG_SEED` parsed from `value`, if set.
pub fn parse_seed_env(value: Option<&str>) -> Result<Option<u64>> {
    value
        .map(|v| {
            v.trim().parse().map_err(|_| {
                CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })
        })
        .transpose()
}

pub fn env_seed() -> Result<Option<u64>> {
    parse_seed_env(std::env::var(SEED_ENV).ok().as_deref())
}

impl RunConfig {
    /// Defaults with the environment seed, overlaid with the JSON object in
    /// `file` (partial objects allowed at any depth).
    pub fn resolve(env_seed: Option<u64>, file: Option<&Path>) -> Result<Self> {
        let mut base = Self::default();
        if let Some(s) = env_seed {
            base.seed = s;
        }
        let mut cfg = match file {
            None => base,
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let over: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                if !over.is_object() {
                    return Err(CliError::Config(format!(
                        "{}: expected a JSON object",
                        path.display()
                    )));
                }
                let mut merged = serde_json::to_value(&base).expect("config serializes");
                merge(&mut merged, over);
                serde_json::from_value(merged)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
        };
        cfg.sync();
        Ok(cfg)
    }

    /// Copy the run seed into the trainer.
    pub fn sync(&mut self) {
        self.trainer.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        self.unet.validate()?;
        self.discriminator.validate()?;
        Ok(())
    }
}
