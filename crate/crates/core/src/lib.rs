//! Domain-adversarial training of a 2D U-Net segmenter.
//!
//! The crate is `no_std` + `alloc` with the default `std` feature disabled.
//! It contains everything that is pure computation:
//!
//! - [`autodiff`]: a reverse-mode tape over dense tensors with the operator
//!   set the two networks need.
//! - [`nn`]: the U-Net segmenter, the domain discriminator and their
//!   partitioned parameter sets.
//! - [`data`]: a synthetic multi-domain cardiac phantom generator plus the
//!   preprocessing and augmentation chain.
//! - [`train`]: the three-step segmentation / discrimination / adversarial
//!   update, the staged schedule, ADAM and early stopping.
//! - [`metrics`]: Dice, Hausdorff, sliding-window inference, the
//!   Mann-Whitney U test, embeddings and the domain probe.
//!
//! File formats, logs and the command line live in the `dannseg` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
