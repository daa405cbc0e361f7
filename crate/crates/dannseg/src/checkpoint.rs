//! Checkpoint files: the magic `DANNSEG1`, the header length as a
//! little-endian `u64`, a JSON header, then every tensor as raw
//! little-endian floats in header order.
//!
//! Tensor names are namespaced: `seg/<param>`, `disc/<param>`,
//! `seg.running/<bn>/mean|var`, `disc.running/...`, and optimizer moments
//! `opt.<seg|disc|adv>/<m|v>/<param>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use dannseg_core::autodiff::BatchNormStats;
use dannseg_core::nn::{Discriminator, NetworkParameters, Partition, UNet, UNetConfig};
use dannseg_core::train::{AdamState, Model, Moments, TrainerState, TrainingLog, TrainingMode};
use dannseg_core::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{Precision, RunConfig};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"DANNSEG1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Update partition of learnable tensors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerSteps {
    pub seg: u64,
    pub disc: u64,
    pub adversarial: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: Precision,
    pub seed: u64,
    /// Completed epochs; training resumes at this zero-based epoch.
    pub epoch: usize,
    pub config: RunConfig,
    /// Discriminator domain ids in label order.
    pub domains: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    /// Present in full training states that can be resumed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizers: Option<OptimizerSteps>,
    pub log: TrainingLog,
}

/// A loaded checkpoint with its payload widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    values: BTreeMap<String, Vec<f64>>,
}

struct Writer {
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
    dtype: Precision,
}

impl Writer {
    fn push<T: Real>(
        &mut self,
        name: String,
        partition: Option<Partition>,
        shape: &[usize],
        data: &[T],
    ) {
        self.entries.push(TensorEntry {
            name,
            partition,
            shape: shape.to_vec(),
            offset: self.payload.len(),
        });
        for v in data {
            match self.dtype {
                Precision::F32 => self
                    .payload
                    .extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                Precision::F64 => self.payload.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }

    fn network<T: Real>(&mut self, prefix: &str, params: &NetworkParameters<T>) {
        for e in params.entries() {
            self.push(
                format!("{prefix}/{}", e.name),
                Some(e.partition),
                e.tensor.shape(),
                e.tensor.data(),
            );
        }
        for (name, s) in params.running() {
            self.push(
                format!("{prefix}.running/{name}/mean"),
                None,
                &[s.mean.len()],
                &s.mean,
            );
            self.push(
                format!("{prefix}.running/{name}/var"),
                None,
                &[s.var.len()],
                &s.var,
            );
        }
    }

    fn optimizer<T: Real>(&mut self, prefix: &str, opt: &AdamState<T>) {
        for (name, m) in &opt.moments {
            self.push(format!("opt.{prefix}/m/{name}"), None, &[m.m.len()], &m.m);
            self.push(format!("opt.{prefix}/v/{name}"), None, &[m.v.len()], &m.v);
        }
    }
}

fn dtype_of<T: Real>() -> Precision {
    if core::mem::size_of::<T>() == 8 {
        Precision::F64
    } else {
        Precision::F32
    }
}

/// Serialize a training state. Without `with_optimizer` the file holds
/// the networks only and cannot be resumed.
pub fn encode<T: Real>(
    state: &TrainerState<T>,
    config: &RunConfig,
    domains: &[String],
    with_optimizer: bool,
) -> Vec<u8> {
    let mut w = Writer {
        entries: Vec::new(),
        payload: Vec::new(),
        dtype: dtype_of::<T>(),
    };
    w.network("seg", &state.model.seg_params);
    w.network("disc", &state.model.disc_params);
    let optimizers = with_optimizer.then(|| {
        w.optimizer("seg", &state.seg_opt);
        w.optimizer("disc", &state.disc_opt);
        w.optimizer("adv", &state.adv_opt);
        OptimizerSteps {
            seg: state.seg_opt.step,
            disc: state.disc_opt.step,
            adversarial: state.adv_opt.step,
        }
    });
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        dtype: w.dtype,
        seed: config.seed,
        epoch: state.next_epoch,
        config: config.clone(),
        domains: domains.to_vec(),
        tensors: w.entries,
        optimizers,
        log: state.log.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + w.payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.payload);
    out
}

/// Write atomically through a temporary file in the same directory.
pub fn save<T: Real>(
    path: &Path,
    state: &TrainerState<T>,
    config: &RunConfig,
    domains: &[String],
    with_optimizer: bool,
) -> Result<()> {
    let bytes = encode(state, config, domains, with_optimizer);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = fs::File::create(&tmp).map_err(CliError::io(&tmp))?;
    f.write_all(&bytes).map_err(CliError::io(&tmp))?;
    f.sync_all().map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

fn corrupt(what: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("malformed checkpoint: {what}"))
}

impl Checkpoint {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing DANNSEG1 magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if len > body.len() {
            return Err(corrupt(format!("header length {len} exceeds file size")));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..len]).map_err(corrupt)?;
        if header.format_version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let payload = &body[len..];
        let width = match header.dtype {
            Precision::F32 => 4,
            Precision::F64 => 8,
        };
        let mut values = BTreeMap::new();
        let mut expected_offset = 0;
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            if t.offset != expected_offset || t.offset + n * width > payload.len() {
                return Err(corrupt(format!(
                    "tensor `{}` lies outside the payload",
                    t.name
                )));
            }
            let raw = &payload[t.offset..t.offset + n * width];
            let data: Vec<f64> = match header.dtype {
                Precision::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                Precision::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            if values.insert(t.name.clone(), data).is_some() {
                return Err(corrupt(format!("duplicate tensor `{}`", t.name)));
            }
            expected_offset += n * width;
        }
        if expected_offset != payload.len() {
            return Err(corrupt(format!(
                "{} trailing payload bytes",
                payload.len() - expected_offset
            )));
        }
        Ok(Self { header, values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(CliError::io(path))?;
        Self::decode(&bytes).map_err(|e| match e {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn can_resume(&self) -> bool {
        self.header.optimizers.is_some()
    }

    fn take<T: Real>(&self, name: &str, shape: &[usize]) -> Result<Vec<T>> {
        let entry = self
            .header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "checkpoint lacks tensor `{name}` required by its configuration"
                ))
            })?;
        if entry.shape != shape {
            return Err(CliError::Config(format!(
                "checkpoint tensor `{name}` has shape {:?}, configuration needs {shape:?}",
                entry.shape
            )));
        }
        Ok(self.values[name].iter().map(|&v| T::lit(v)).collect())
    }

    /// Fill a freshly initialized parameter set of the configured
    /// architecture. Every tensor must be present with the same shape,
    /// and no extra network tensor may be left over.
    fn fill<T: Real>(
        &self,
        prefix: &str,
        mut params: NetworkParameters<T>,
    ) -> Result<NetworkParameters<T>> {
        let names: Vec<(String, Vec<usize>)> = params
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.tensor.shape().to_vec()))
            .collect();
        for (name, shape) in &names {
            let data = self.take::<T>(&format!("{prefix}/{name}"), shape)?;
            *params.get_mut(name).expect("listed") = Tensor::new(shape, data)?;
        }
        let running: Vec<(String, usize)> = params
            .running()
            .iter()
            .map(|(k, s)| (k.clone(), s.mean.len()))
            .collect();
        let mut updates = Vec::new();
        for (name, c) in running {
            let mean = self.take::<T>(&format!("{prefix}.running/{name}/mean"), &[c])?;
            let var = self.take::<T>(&format!("{prefix}.running/{name}/var"), &[c])?;
            updates.push((name, BatchNormStats { mean, var }));
        }
        params.apply_running(updates);
        let expected = names.len() + 2 * params.running().len();
        let present = self
            .header
            .tensors
            .iter()
            .filter(|t| {
                t.name.starts_with(&format!("{prefix}/"))
                    || t.name.starts_with(&format!("{prefix}.running/"))
            })
            .count();
        if present != expected {
            return Err(CliError::Config(format!(
                "checkpoint has {present} `{prefix}` tensors, configuration defines {expected}"
            )));
        }
        Ok(params)
    }

    fn optimizer<T: Real>(
        &self,
        prefix: &str,
        step: u64,
        config: dannseg_core::train::AdamConfig,
    ) -> Result<AdamState<T>> {
        let mut state = AdamState::new(config);
        state.step = step;
        let m_prefix = format!("opt.{prefix}/m/");
        for t in self
            .header
            .tensors
            .iter()
            .filter(|t| t.name.starts_with(&m_prefix))
        {
            let name = &t.name[m_prefix.len()..];
            let m = self.take::<T>(&t.name, &t.shape)?;
            let v = self.take::<T>(&format!("opt.{prefix}/v/{name}"), &t.shape)?;
            state.moments.insert(name.to_string(), Moments { m, v });
        }
        Ok(state)
    }

    /// The segmenter of architecture `config` with this checkpoint's
    /// weights.
    pub fn segmenter<T: Real>(&self, config: &UNetConfig) -> Result<(UNet, NetworkParameters<T>)> {
        let unet = UNet::new(config.clone())?;
        let params = self.fill("seg", unet.init_parameters::<T>(0)?)?;
        Ok((unet, params))
    }

    /// The networks described by the header configuration.
    pub fn model<T: Real>(&self) -> Result<Model<T>> {
        let cfg = &self.header.config;
        let unet = UNet::new(cfg.unet.clone())?;
        let seg_params = self.fill("seg", unet.init_parameters::<T>(0)?)?;
        let (disc, disc_params) = match cfg.trainer.mode {
            TrainingMode::Adversarial => {
                let disc = Discriminator::new(cfg.discriminator.clone(), unet.config())?;
                let params = self.fill("disc", disc.init_parameters::<T>(0)?)?;
                (Some(disc), params)
            }
            TrainingMode::Baseline => {
                if self
                    .header
                    .tensors
                    .iter()
                    .any(|t| t.name.starts_with("disc"))
                {
                    return Err(CliError::Config(
                        "baseline checkpoint contains discriminator tensors".into(),
                    ));
                }
                (None, NetworkParameters::new())
            }
        };
        Ok(Model {
            unet,
            disc,
            seg_params,
            disc_params,
        })
    }

    /// The full training state; errors for network-only checkpoints.
    pub fn state<T: Real>(&self) -> Result<TrainerState<T>> {
        let steps = self.header.optimizers.ok_or_else(|| {
            CliError::Usage("checkpoint holds no optimizer state and cannot be resumed".into())
        })?;
        let adam = self.header.config.trainer.adam;
        Ok(TrainerState {
            next_epoch: self.header.epoch,
            model: self.model()?,
            seg_opt: self.optimizer("seg", steps.seg, adam)?,
            disc_opt: self.optimizer("disc", steps.disc, adam)?,
            adv_opt: self.optimizer("adv", steps.adversarial, adam)?,
            log: self.header.log.clone(),
        })
    }
}
