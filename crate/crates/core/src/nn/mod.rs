//! The segmentation U-Net, the domain discriminator, and their parameters.

mod discriminator;
mod params;
mod unet;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use params::{
    Bound, Gradients, NetworkParameters, NormConfig, ParamEntry, Partition, PartitionSet,
};
pub use unet::{UNet, UNetConfig, UNetOutput};

/// Forward-pass behaviour of batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[cfg(test)]
mod tests;
