//! Synthetic multi-domain cardiac phantoms and the preprocessing /
//! augmentation chain applied to them.
//!
//! Chain order: resample → crop/pad → [0, 1] normalization (all done once
//! at generation time) → augmentation → CLAHE (done per use).

mod augment;
mod clahe;
mod generator;
mod grid;
mod phantom;
mod preprocess;
mod sample;

pub use augment::{augment, AugmentPolicy, GeometricTransform};
pub use clahe::{clahe, contrast_normalize, ClaheConfig};
pub use generator::{
    default_domains, generate_dataset, DomainRole, DomainSpec, GeneratorConfig, SplitFractions,
};
pub use grid::{Grid, Image, LabelMap};
pub use phantom::generate_phantom;
pub use preprocess::{
    crop_or_pad, crop_or_pad_to, normalize_unit, preprocess, resample, resampled_len,
    PreprocessConfig,
};
pub use sample::{DomainStyle, Sample, Split, BACKGROUND, CLASS_NAMES, LV, MYO, RV};
