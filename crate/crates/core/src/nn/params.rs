use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Mode;
use crate::autodiff::{BatchNormMode, BatchNormStats, Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which update rule may touch a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Partition {
    /// Convolution kernels and biases of the segmenter; the only tensors the
    /// adversarial update changes.
    #[serde(rename = "seg-conv")]
    SegConv,
    /// Remaining segmenter parameters (batch-norm affine terms).
    #[serde(rename = "seg-other")]
    SegOther,
    #[serde(rename = "disc")]
    Disc,
}

impl Partition {
    pub fn label(self) -> &'static str {
        match self {
            Partition::SegConv => "seg-conv",
            Partition::SegOther => "seg-other",
            Partition::Disc => "disc",
        }
    }

    fn bit(self) -> u8 {
        match self {
            Partition::SegConv => 1,
            Partition::SegOther => 2,
            Partition::Disc => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionSet(u8);

impl PartitionSet {
    pub const NONE: Self = Self(0);
    pub const SEG_CONV: Self = Self(1);
    pub const SEG_OTHER: Self = Self(2);
    pub const SEGMENTER: Self = Self(1 | 2);
    pub const DISCRIMINATOR: Self = Self(4);
    pub const ALL: Self = Self(7);

    pub fn contains(self, p: Partition) -> bool {
        self.0 & p.bit() != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub partition: Partition,
    pub tensor: Tensor<T>,
}

/// Named, ordered learnable tensors of one network plus its batch-norm
/// running statistics (state, not parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters<T> {
    entries: Vec<ParamEntry<T>>,
    index: BTreeMap<String, usize>,
    running: BTreeMap<String, BatchNormStats<T>>,
}

impl<T: Real> Default for NetworkParameters<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> NetworkParameters<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: BTreeMap::new(),
            running: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, partition: Partition, tensor: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter `{name}`"
            )));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            partition,
            tensor,
        });
        Ok(())
    }

    pub fn insert_running(&mut self, name: &str, stats: BatchNormStats<T>) {
        self.running.insert(name.to_string(), stats);
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].tensor)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn running(&self) -> &BTreeMap<String, BatchNormStats<T>> {
        &self.running
    }

    pub fn running_stats(&self, name: &str) -> Option<&BatchNormStats<T>> {
        self.running.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count of learnable tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn names_in(&self, set: PartitionSet) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| set.contains(e.partition))
            .map(|e| e.name.as_str())
            .collect()
    }

    pub fn count_in(&self, set: PartitionSet) -> usize {
        self.entries
            .iter()
            .filter(|e| set.contains(e.partition))
            .count()
    }

    /// FNV-1a over names and value bits of the tensors in `set`.
    pub fn fingerprint(&self, set: PartitionSet) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for e in self.entries.iter().filter(|e| set.contains(e.partition)) {
            feed(e.name.as_bytes());
            for v in e.tensor.data() {
                feed(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn apply_running(&mut self, updates: Vec<(String, BatchNormStats<T>)>) {
        for (name, stats) in updates {
            self.running.insert(name, stats);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
            && self
                .running
                .values()
                .all(|s| s.mean.iter().chain(&s.var).all(|v| v.is_finite()))
    }

    /// Bind this parameter set to a graph for one forward pass. Tensors in
    /// `trainable` are recorded with gradient tracking.
    pub fn bind(&self, trainable: PartitionSet, mode: Mode, norm: NormConfig) -> Bound<'_, T> {
        Bound {
            params: self,
            trainable,
            mode,
            norm,
            vars: BTreeMap::new(),
            updates: Vec::new(),
        }
    }

    pub fn cast<U: Real>(&self) -> NetworkParameters<U> {
        NetworkParameters {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    partition: e.partition,
                    tensor: e.tensor.cast(),
                })
                .collect(),
            index: self.index.clone(),
            running: self
                .running
                .iter()
                .map(|(k, s)| {
                    let c = |v: &Vec<T>| v.iter().map(|&x| U::lit(x.as_f64())).collect();
                    (
                        k.clone(),
                        BatchNormStats {
                            mean: c(&s.mean),
                            var: c(&s.var),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients<T> {
    pub by_name: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.by_name.get(name).map(Vec::as_slice)
    }

    pub fn squared_norm(&self) -> f64 {
        self.by_name
            .values()
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }
}

/// A parameter set bound to one graph.
pub struct Bound<'p, T> {
    params: &'p NetworkParameters<T>,
    trainable: PartitionSet,
    mode: Mode,
    norm: NormConfig,
    vars: BTreeMap<usize, Var>,
    updates: Vec<(String, BatchNormStats<T>)>,
}

impl<T: Real> Bound<'_, T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&mut self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        let &i = self
            .params
            .index
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))?;
        if let Some(&v) = self.vars.get(&i) {
            return Ok(v);
        }
        let e = &self.params.entries[i];
        let v = g.leaf(
            e.tensor
                .clone()
                .with_requires_grad(self.trainable.contains(e.partition)),
        );
        self.vars.insert(i, v);
        Ok(v)
    }

    pub fn conv(&mut self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(g, &format!("{prefix}.weight"))?;
        let b = self.param(g, &format!("{prefix}.bias"))?;
        g.conv2d(x, w, b, 1, Padding::Same)
    }

    pub fn batchnorm(&mut self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(g, &format!("{prefix}.gamma"))?;
        let beta = self.param(g, &format!("{prefix}.beta"))?;
        let stats = self.params.running.get(prefix).ok_or_else(|| {
            Error::InvalidArgument(format!("missing running statistics `{prefix}`"))
        })?;
        let mode = match self.mode {
            Mode::Train => BatchNormMode::Train {
                momentum: self.norm.momentum,
            },
            Mode::Eval => BatchNormMode::Eval,
        };
        let (y, update) = g.batchnorm2d(x, gamma, beta, stats, mode, self.norm.eps)?;
        if let Some(u) = update {
            self.updates.push((prefix.to_string(), u));
        }
        Ok(y)
    }

    /// conv → batch norm → ReLU.
    pub fn conv_block(&mut self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var> {
        let y = self.conv(g, x, &format!("{prefix}.conv"))?;
        let y = self.batchnorm(g, y, &format!("{prefix}.bn"))?;
        g.relu(y)
    }

    pub fn dense(&mut self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(g, &format!("{prefix}.weight"))?;
        let b = self.param(g, &format!("{prefix}.bias"))?;
        g.dense(x, w, b)
    }

    /// Gradients of every trainable tensor bound so far. Call after
    /// [`Graph::backward`].
    pub fn gradients(&self, g: &Graph<T>) -> Gradients<T> {
        let mut by_name = BTreeMap::new();
        for (&i, &v) in &self.vars {
            if let Some(grad) = g.grad(v) {
                by_name.insert(self.params.entries[i].name.clone(), grad.to_vec());
            }
        }
        Gradients { by_name }
    }

    /// Running-statistics updates produced by train-mode batch norm.
    pub fn into_running_updates(self) -> Vec<(String, BatchNormStats<T>)> {
        self.updates
    }
}

/// He-normal tensor with `std = sqrt(2 / fan_in)`.
pub(crate) fn he_normal<T: Real>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = libm::sqrt(2.0 / fan_in as f64);
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::lit(normal.sample(rng))).collect()).expect("valid shape")
}

/// Register conv kernel + bias (`<prefix>.conv`) and batch norm
/// (`<prefix>.bn`) for a conv block.
pub(crate) fn add_conv_block<T: Real>(
    p: &mut NetworkParameters<T>,
    rng: &mut Rng,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    conv_part: Partition,
    other_part: Partition,
) -> Result<()> {
    add_conv(p, rng, &format!("{prefix}.conv"), cin, cout, k, conv_part)?;
    let bn = format!("{prefix}.bn");
    p.insert(
        &format!("{bn}.gamma"),
        other_part,
        Tensor::full(&[cout], T::one()),
    )?;
    p.insert(&format!("{bn}.beta"), other_part, Tensor::zeros(&[cout]))?;
    p.insert_running(&bn, BatchNormStats::new(cout));
    Ok(())
}

pub(crate) fn add_conv<T: Real>(
    p: &mut NetworkParameters<T>,
    rng: &mut Rng,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    part: Partition,
) -> Result<()> {
    p.insert(
        &format!("{prefix}.weight"),
        part,
        he_normal(rng, &[cout, cin, k, k], cin * k * k),
    )?;
    p.insert(&format!("{prefix}.bias"), part, Tensor::zeros(&[cout]))
}

pub(crate) fn add_dense<T: Real>(
    p: &mut NetworkParameters<T>,
    rng: &mut Rng,
    prefix: &str,
    fin: usize,
    fout: usize,
) -> Result<()> {
    p.insert(
        &format!("{prefix}.weight"),
        Partition::Disc,
        he_normal(rng, &[fout, fin], fin),
    )?;
    p.insert(
        &format!("{prefix}.bias"),
        Partition::Disc,
        Tensor::zeros(&[fout]),
    )
}
