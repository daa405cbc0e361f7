use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid::{Grid, Image, LabelMap};
use super::sample::Sample;
use crate::rng::{rng_for, symmetric, uniform, Rng};

/// Augmentation magnitudes. Every range is symmetric around the identity;
/// all zeros disables augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Scale factor drawn from `1 ± scale`.
    pub scale: f64,
    /// Translation half-range in pixels.
    pub translate: f64,
    /// Rotation half-range in degrees.
    pub rotate_deg: f64,
    /// Largest control-point displacement of the B-spline warp, in pixels.
    pub warp_amplitude: f64,
    /// Control points per axis of the warp grid.
    pub warp_grid: usize,
    /// Noise standard deviation is drawn from `[0, noise_sigma]`.
    pub noise_sigma: f64,
    /// Additive intensity shift half-range.
    pub intensity_shift: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self::desk()
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self {
            scale: 0.0,
            translate: 0.0,
            rotate_deg: 0.0,
            warp_amplitude: 0.0,
            warp_grid: 4,
            noise_sigma: 0.0,
            intensity_shift: 0.0,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            scale: 0.1,
            translate: 10.0,
            rotate_deg: 15.0,
            warp_amplitude: 5.0,
            warp_grid: 4,
            noise_sigma: 0.05,
            intensity_shift: 0.1,
        }
    }

    /// Full-scale magnitudes with pixel distances shrunk for 32 × 32 inputs.
    pub fn desk() -> Self {
        Self {
            translate: 2.0,
            warp_amplitude: 1.0,
            ..Self::full_scale()
        }
    }
}

/// One draw of the geometric part of a policy, applied identically to an
/// image (bilinear) and its mask (nearest neighbour).
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricTransform {
    height: usize,
    width: usize,
    scale: f64,
    cos: f64,
    sin: f64,
    shift: (f64, f64),
    /// `(dy, dx)` per control point, row-major `grid × grid`.
    control: Vec<(f64, f64)>,
    grid: usize,
}

/// Uniform cubic B-spline basis at `t ∈ [0, 1]`.
fn bspline_basis(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [
        s * s * s / 6.0,
        (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0,
        (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
        t * t * t / 6.0,
    ]
}

impl GeometricTransform {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            scale: 1.0,
            cos: 1.0,
            sin: 0.0,
            shift: (0.0, 0.0),
            control: Vec::new(),
            grid: 0,
        }
    }

    pub fn sample(rng: &mut Rng, policy: &AugmentPolicy, height: usize, width: usize) -> Self {
        let scale = 1.0 + symmetric(rng, policy.scale);
        let angle = symmetric(rng, policy.rotate_deg).to_radians();
        let shift = (
            symmetric(rng, policy.translate),
            symmetric(rng, policy.translate),
        );
        let (grid, control) = if policy.warp_amplitude > 0.0 && policy.warp_grid >= 2 {
            let n = policy.warp_grid;
            let pts = (0..n * n)
                .map(|_| {
                    (
                        symmetric(rng, policy.warp_amplitude),
                        symmetric(rng, policy.warp_amplitude),
                    )
                })
                .collect();
            (n, pts)
        } else {
            (0, Vec::new())
        };
        Self {
            height,
            width,
            scale,
            cos: libm::cos(angle),
            sin: libm::sin(angle),
            shift,
            control,
            grid,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0
            && self.sin == 0.0
            && self.cos == 1.0
            && self.shift == (0.0, 0.0)
            && self.grid == 0
    }

    /// Displacement of the cubic B-spline warp at an output pixel. Weights
    /// are a partition of unity, so no displacement exceeds the largest
    /// control value.
    fn warp(&self, y: f64, x: f64) -> (f64, f64) {
        if self.grid == 0 {
            return (0.0, 0.0);
        }
        let n = self.grid;
        // map the image onto the n - 3 spline segments spanned by the grid
        let segs = (n - 3).max(1) as f64;
        let locate = |p: f64, len: usize| -> (usize, [f64; 4]) {
            let u = if len > 1 {
                p / (len - 1) as f64 * segs
            } else {
                0.0
            };
            let i = (libm::floor(u) as usize).min(segs as usize - 1);
            (i, bspline_basis(u - i as f64))
        };
        let (iy, by) = locate(y, self.height);
        let (ix, bx) = locate(x, self.width);
        let mut d = (0.0, 0.0);
        for (a, wy) in by.iter().enumerate() {
            for (b, wx) in bx.iter().enumerate() {
                let r = (iy + a).min(n - 1);
                let c = (ix + b).min(n - 1);
                let (dy, dx) = self.control[r * n + c];
                d.0 += wy * wx * dy;
                d.1 += wy * wx * dx;
            }
        }
        d
    }

    /// Source coordinate for output pixel `(y, x)`.
    pub fn source(&self, y: usize, x: usize) -> (f64, f64) {
        let cy = (self.height as f64 - 1.0) / 2.0;
        let cx = (self.width as f64 - 1.0) / 2.0;
        let (dy, dx) = self.warp(y as f64, x as f64);
        let py = y as f64 - cy - self.shift.0;
        let px = x as f64 - cx - self.shift.1;
        // inverse rotation then inverse scale
        let ry = (self.cos * py - self.sin * px) / self.scale;
        let rx = (self.sin * py + self.cos * px) / self.scale;
        (ry + cy + dy, rx + cx + dx)
    }

    pub fn apply_image(&self, image: &Image) -> Image {
        if self.is_identity() {
            return image.clone();
        }
        let (h, w) = image.dims();
        Grid::from_fn(h, w, |y, x| {
            let (sy, sx) = self.source(y, x);
            image.bilinear(sy, sx)
        })
    }

    pub fn apply_mask(&self, mask: &LabelMap) -> LabelMap {
        if self.is_identity() {
            return mask.clone();
        }
        let (h, w) = mask.dims();
        Grid::from_fn(h, w, |y, x| {
            let (sy, sx) = self.source(y, x);
            mask.get_clamped(
                libm::floor(sy + 0.5) as isize,
                libm::floor(sx + 0.5) as isize,
            )
        })
    }
}

/// Random geometric transform applied jointly to image and mask, followed
/// by Gaussian noise and an intensity shift on the image, clamped to
/// `[0, 1]`. Deterministic in `seed`.
pub fn augment(sample: &Sample, seed: u64, policy: &AugmentPolicy) -> Sample {
    let mut rng = rng_for(seed, &[0xa06]);
    let (h, w) = sample.image.dims();
    let transform = GeometricTransform::sample(&mut rng, policy, h, w);
    let mut image = transform.apply_image(&sample.image);
    let mask = sample.mask.as_ref().map(|m| transform.apply_mask(m));
    let sigma = uniform(&mut rng, 0.0, policy.noise_sigma);
    let shift = symmetric(&mut rng, policy.intensity_shift);
    if sigma > 0.0 || shift != 0.0 {
        let normal = Normal::new(0.0, sigma).expect("non-negative sigma");
        for v in image.data_mut() {
            let n = if sigma > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            *v = (*v as f64 + n + shift).clamp(0.0, 1.0) as f32;
        }
    }
    Sample {
        image,
        mask,
        ..sample.clone()
    }
}
