use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::{add_conv_block, add_dense, Bound, NetworkParameters, NormConfig, Partition};
use super::unet::UNetConfig;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub domains: usize,
    /// Widths of the conv stages. All but the last form the branch over
    /// the penultimate tap; the last one is the bottleneck branch.
    pub conv_widths: Vec<usize>,
    /// Widths of the two hidden fully connected layers; the third maps to
    /// `domains` logits.
    pub hidden: Vec<usize>,
    pub kernel_size: usize,
    pub norm: NormConfig,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            domains: 3,
            conv_widths: vec![16, 32, 64, 128],
            hidden: vec![128, 64],
            kernel_size: 3,
            norm: NormConfig::default(),
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.domains < 2 {
            return Err(Error::Config(
                "the discriminator needs at least two domains".into(),
            ));
        }
        if self.conv_widths.len() < 2 || self.conv_widths.contains(&0) {
            return Err(Error::Config(
                "need at least two positive conv widths".into(),
            ));
        }
        if self.hidden.len() != 2 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "need exactly two positive hidden widths".into(),
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(
                "discriminator kernel size must be odd".into(),
            ));
        }
        Ok(())
    }

    fn penultimate_widths(&self) -> &[usize] {
        &self.conv_widths[..self.conv_widths.len() - 1]
    }

    fn bottleneck_width(&self) -> usize {
        self.conv_widths[self.conv_widths.len() - 1]
    }
}

/// Domain classifier over the U-Net's penultimate and bottleneck
/// activations.
///
/// Each tap runs through its own stack of conv-BN-ReLU(-maxpool) stages
/// (pooling only while both spatial sides are even), is globally average
/// pooled, and the two vectors are concatenated into three fully connected
/// layers with ReLU between them. The output is raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    penultimate_channels: usize,
    bottleneck_channels: usize,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, unet: &UNetConfig) -> Result<Self> {
        config.validate()?;
        unet.validate()?;
        Ok(Self {
            config,
            penultimate_channels: unet.base_channels,
            bottleneck_channels: unet.bottleneck_channels(),
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn domains(&self) -> usize {
        self.config.domains
    }

    pub fn init_parameters<T: Real>(&self, seed: u64) -> Result<NetworkParameters<T>> {
        let c = &self.config;
        let k = c.kernel_size;
        let mut rng = rng_for(seed, &[0xd15c]);
        let mut p = NetworkParameters::new();
        let part = Partition::Disc;
        let mut cin = self.penultimate_channels;
        for (i, &w) in c.penultimate_widths().iter().enumerate() {
            add_conv_block(&mut p, &mut rng, &format!("pen{i}"), cin, w, k, part, part)?;
            cin = w;
        }
        add_conv_block(
            &mut p,
            &mut rng,
            "bot0",
            self.bottleneck_channels,
            c.bottleneck_width(),
            k,
            part,
            part,
        )?;
        let fused = cin + c.bottleneck_width();
        add_dense(&mut p, &mut rng, "fc1", fused, c.hidden[0])?;
        add_dense(&mut p, &mut rng, "fc2", c.hidden[0], c.hidden[1])?;
        add_dense(&mut p, &mut rng, "fc3", c.hidden[1], c.domains)?;
        Ok(p)
    }

    fn stage<T: Real>(
        g: &mut Graph<T>,
        params: &mut Bound<'_, T>,
        x: Var,
        prefix: &str,
    ) -> Result<Var> {
        let y = params.conv_block(g, x, prefix)?;
        let (_, _, h, w) = g.value(y).dims4("discriminator")?;
        if h % 2 == 0 && w % 2 == 0 {
            g.maxpool2d(y)
        } else {
            Ok(y)
        }
    }

    /// `[N, domains]` logits.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &mut Bound<'_, T>,
        penultimate: Var,
        bottleneck: Var,
    ) -> Result<Var> {
        let (np, cp, _, _) = g.value(penultimate).dims4("discriminator_forward")?;
        let (nb, cb, _, _) = g.value(bottleneck).dims4("discriminator_forward")?;
        if np != nb {
            return Err(Error::shape(
                "discriminator_forward",
                format!("tap batch sizes differ: {np} vs {nb}"),
            ));
        }
        if cp != self.penultimate_channels || cb != self.bottleneck_channels {
            return Err(Error::shape(
                "discriminator_forward",
                format!(
                    "tap channels {cp}/{cb}, expected {}/{}",
                    self.penultimate_channels, self.bottleneck_channels
                ),
            ));
        }
        let mut a = penultimate;
        for i in 0..self.config.penultimate_widths().len() {
            a = Self::stage(g, params, a, &format!("pen{i}"))?;
        }
        let b = Self::stage(g, params, bottleneck, "bot0")?;
        let a = g.global_avg_pool(a)?;
        let b = g.global_avg_pool(b)?;
        let x = g.concat(a, b)?;
        let x = params.dense(g, x, "fc1")?;
        let x = g.relu(x)?;
        let x = params.dense(g, x, "fc2")?;
        let x = g.relu(x)?;
        params.dense(g, x, "fc3")
    }
}
