use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::grid::{Grid, Image, LabelMap};
use super::sample::{DomainStyle, Sample, Split, BACKGROUND, LV, MYO, RV};
use crate::rng::{rng_for, uniform};

/// Random anatomy in pixel units of an `size × size` grid.
struct Anatomy {
    cy: f64,
    cx: f64,
    r_lv: f64,
    r_outer: f64,
    rv_cy: f64,
    rv_cx: f64,
    r_rv: f64,
    body: (f64, f64),
    blobs: Vec<(f64, f64, f64, f64)>,
    intensities: [f64; 5],
}

const STREAM_GEOMETRY: u64 = 1;
const STREAM_STYLE: u64 = 2;

impl Anatomy {
    fn sample(seed: u64, size: usize) -> Self {
        let mut rng = rng_for(seed, &[STREAM_GEOMETRY]);
        let s = size as f64;
        let cy = s * (0.5 + uniform(&mut rng, -0.07, 0.07)) - 0.5;
        let cx = s * (0.5 + uniform(&mut rng, -0.07, 0.07)) - 0.5;
        let r_lv = s * uniform(&mut rng, 0.09, 0.13);
        // at least sqrt(2) so every LV boundary pixel has a MYO 8-neighbour
        let thickness = (s * uniform(&mut rng, 0.045, 0.065)).max(1.6);
        let r_outer = r_lv + thickness;
        let r_rv = s * uniform(&mut rng, 0.11, 0.15);
        let theta = PI + uniform(&mut rng, -0.6, 0.6);
        let reach = r_outer + 0.35 * r_rv;
        let rv_cy = cy + reach * libm::sin(theta);
        let rv_cx = cx + reach * libm::cos(theta);
        let body = (
            s * uniform(&mut rng, 0.38, 0.46),
            s * uniform(&mut rng, 0.40, 0.47),
        );
        let blobs = (0..3)
            .map(|_| {
                let by = s * uniform(&mut rng, 0.2, 0.8);
                let bx = s * uniform(&mut rng, 0.2, 0.8);
                let br = s * uniform(&mut rng, 0.04, 0.09);
                let level = if rng.random_bool(0.5) {
                    uniform(&mut rng, 0.55, 0.7)
                } else {
                    uniform(&mut rng, 0.08, 0.18)
                };
                (by, bx, br, level)
            })
            .collect();
        let j = |rng: &mut crate::rng::Rng, v: f64| v + uniform(rng, -0.04, 0.04);
        let intensities = [
            0.03,
            j(&mut rng, 0.85),
            j(&mut rng, 0.22),
            j(&mut rng, 0.78),
            j(&mut rng, 0.38),
        ];
        Self {
            cy,
            cx,
            r_lv,
            r_outer,
            rv_cy,
            rv_cx,
            r_rv,
            body,
            blobs,
            intensities,
        }
    }

    fn label(&self, y: f64, x: f64) -> u8 {
        let d = libm::hypot(y - self.cy, x - self.cx);
        if d <= self.r_lv {
            LV
        } else if d <= self.r_outer {
            MYO
        } else if libm::hypot(y - self.rv_cy, x - self.rv_cx) <= self.r_rv {
            RV
        } else {
            BACKGROUND
        }
    }

    /// Noise-free anatomical intensity at a point.
    fn intensity(&self, y: f64, x: f64, size: usize) -> f64 {
        let label = self.label(y, x);
        if label != BACKGROUND {
            return self.intensities[label as usize];
        }
        let c = (size as f64 - 1.0) / 2.0;
        let (ay, ax) = self.body;
        let (ey, ex) = ((y - c) / ay, (x - c) / ax);
        let e = ey * ey + ex * ex;
        if e > 1.0 {
            return self.intensities[0];
        }
        for &(by, bx, br, level) in &self.blobs {
            if libm::hypot(y - by, x - bx) <= br {
                return level;
            }
        }
        self.intensities[4]
    }
}

/// Smooth multiplicative field `1 + amplitude · f`, `f ∈ [-1, 1]`.
fn bias_field(seed: u64, style: &DomainStyle, size: usize) -> Grid<f64> {
    let mut rng = rng_for(seed, &[STREAM_STYLE, 1]);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let dir = uniform(&mut rng, 0.0, 2.0 * PI);
            let k = 2.0 * PI / (style.bias_smoothness * size as f64);
            (
                k * libm::cos(dir),
                k * libm::sin(dir),
                uniform(&mut rng, 0.0, 2.0 * PI),
            )
        })
        .collect();
    Grid::from_fn(size, size, |y, x| {
        let f: f64 = waves
            .iter()
            .map(|&(ky, kx, phase)| libm::cos(ky * y as f64 + kx * x as f64 + phase))
            .sum::<f64>()
            / waves.len() as f64;
        1.0 + style.bias_amplitude * f
    })
}

/// Render a heart-like phantom on a `size × size` grid at the style's
/// spacing: an LV disk inside a MYO annulus with an RV crescent abutting
/// the annulus, over a body ellipse with a few tissue blobs.
///
/// Geometry depends only on `seed` and `size`, so every style yields the
/// same mask. The style then applies `gain · I^gamma · bias + noise`,
/// clamped to `[0, 1]`.
pub fn generate_phantom(seed: u64, style: &DomainStyle, size: usize) -> Sample {
    let anatomy = Anatomy::sample(seed, size);
    let mask: LabelMap = Grid::from_fn(size, size, |y, x| anatomy.label(y as f64, x as f64));
    let offsets = [-0.25, 0.25];
    let clean = Grid::from_fn(size, size, |y, x| {
        let mut acc = 0.0;
        for dy in offsets {
            for dx in offsets {
                acc += anatomy.intensity(y as f64 + dy, x as f64 + dx, size);
            }
        }
        acc / 4.0
    });
    let bias = bias_field(seed, style, size);
    let mut noise_rng = rng_for(seed, &[STREAM_STYLE, 2]);
    let noise = Normal::new(0.0, style.noise_sigma.max(0.0)).expect("non-negative sigma");
    let data = clean
        .data()
        .iter()
        .zip(bias.data())
        .map(|(&v, &b)| {
            let n = if style.noise_sigma > 0.0 {
                noise.sample(&mut noise_rng)
            } else {
                0.0
            };
            (style.gain * libm::pow(v, style.gamma) * b + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    let image: Image = Grid::new(size, size, data).expect("size matches");
    Sample {
        id: String::new(),
        image,
        mask: Some(mask),
        domain_id: String::new(),
        spacing: (style.spacing, style.spacing),
        split: Split::Train,
    }
}
