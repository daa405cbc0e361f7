use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::{add_conv, add_conv_block, Bound, NetworkParameters, NormConfig, Partition};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    /// Square input side; must be divisible by `2^depth`.
    pub input_size: usize,
    pub base_channels: usize,
    pub depth: usize,
    /// Background, LV, MYO, RV.
    pub classes: usize,
    pub kernel_size: usize,
    pub norm: NormConfig,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl UNetConfig {
    /// 192×192 input, 16 base channels.
    pub fn full_scale() -> Self {
        Self {
            input_size: 192,
            base_channels: 16,
            ..Self::desk()
        }
    }

    /// 32×32 input, 8 base channels.
    pub fn desk() -> Self {
        Self {
            input_size: 32,
            base_channels: 8,
            depth: 4,
            classes: 4,
            kernel_size: 3,
            norm: NormConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(div) {
            return Err(Error::Config(format!(
                "input size {} is not divisible by 2^{} = {div}",
                self.input_size, self.depth
            )));
        }
        if self.kernel_size.is_multiple_of(2) || self.base_channels == 0 || self.classes < 2 {
            return Err(Error::Config(
                "U-Net needs an odd kernel, positive width and at least two classes".into(),
            ));
        }
        Ok(())
    }

    /// Channel count at encoder level `level` (`depth` is the bottleneck).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.depth)
    }

    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> self.depth
    }
}

/// Segmenter outputs plus the two activations the discriminator reads.
#[derive(Debug, Clone, Copy)]
pub struct UNetOutput {
    /// `[N, classes, H, W]` softmax probabilities.
    pub probs: Var,
    /// Last feature map before the 1×1 classification conv, `[N, base, H, W]`.
    pub penultimate: Var,
    /// Minimum-resolution activations, `[N, base·2^depth, H/2^depth, W/2^depth]`.
    pub bottleneck: Var,
}

/// Encoder of `depth` blocks of (conv-BN-ReLU ×2) + 2×2 max-pool, a
/// two-block bottleneck, and a mirrored decoder of nearest-neighbour 2×
/// upsampling, skip concatenation and two conv blocks, followed by a 1×1
/// conv and a softmax over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    config: UNetConfig,
}

impl UNet {
    pub fn new(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// He-normal kernels, zero biases, unit gamma, zero beta. Deterministic
    /// in `seed`.
    pub fn init_parameters<T: Real>(&self, seed: u64) -> Result<NetworkParameters<T>> {
        let c = &self.config;
        let k = c.kernel_size;
        let mut rng = rng_for(seed, &[0x5e6]);
        let mut p = NetworkParameters::new();
        let (conv, other) = (Partition::SegConv, Partition::SegOther);
        let mut cin = 1;
        for level in 0..c.depth {
            let ch = c.channels(level);
            add_conv_block(
                &mut p,
                &mut rng,
                &format!("enc{level}.block1"),
                cin,
                ch,
                k,
                conv,
                other,
            )?;
            add_conv_block(
                &mut p,
                &mut rng,
                &format!("enc{level}.block2"),
                ch,
                ch,
                k,
                conv,
                other,
            )?;
            cin = ch;
        }
        let mid = c.bottleneck_channels();
        add_conv_block(&mut p, &mut rng, "mid.block1", cin, mid, k, conv, other)?;
        add_conv_block(&mut p, &mut rng, "mid.block2", mid, mid, k, conv, other)?;
        let mut below = mid;
        for level in (0..c.depth).rev() {
            let ch = c.channels(level);
            add_conv_block(
                &mut p,
                &mut rng,
                &format!("dec{level}.block1"),
                below + ch,
                ch,
                k,
                conv,
                other,
            )?;
            add_conv_block(
                &mut p,
                &mut rng,
                &format!("dec{level}.block2"),
                ch,
                ch,
                k,
                conv,
                other,
            )?;
            below = ch;
        }
        add_conv(&mut p, &mut rng, "head", below, c.classes, 1, conv)?;
        Ok(p)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &mut Bound<'_, T>,
        image: Var,
    ) -> Result<UNetOutput> {
        let (_, ch, h, w) = g.value(image).dims4("unet_forward")?;
        let s = self.config.input_size;
        if ch != 1 || h != s || w != s {
            return Err(Error::shape(
                "unet_forward",
                format!("expected [N, 1, {s}, {s}], got {:?}", g.shape(image)),
            ));
        }
        let mut x = image;
        let mut skips = Vec::with_capacity(self.config.depth);
        for level in 0..self.config.depth {
            x = params.conv_block(g, x, &format!("enc{level}.block1"))?;
            x = params.conv_block(g, x, &format!("enc{level}.block2"))?;
            skips.push(x);
            x = g.maxpool2d(x)?;
        }
        x = params.conv_block(g, x, "mid.block1")?;
        x = params.conv_block(g, x, "mid.block2")?;
        let bottleneck = x;
        for level in (0..self.config.depth).rev() {
            let up = g.upsample_nearest2x(x)?;
            let cat = g.concat(up, skips[level])?;
            x = params.conv_block(g, cat, &format!("dec{level}.block1"))?;
            x = params.conv_block(g, x, &format!("dec{level}.block2"))?;
        }
        let penultimate = x;
        let logits = params.conv(g, x, "head")?;
        let probs = g.softmax(logits)?;
        Ok(UNetOutput {
            probs,
            penultimate,
            bottleneck,
        })
    }
}
