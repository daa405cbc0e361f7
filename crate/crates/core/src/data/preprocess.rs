use alloc::format;

use serde::{Deserialize, Serialize};

use super::grid::{Grid, Image, LabelMap};
use super::sample::{Sample, BACKGROUND};
use crate::error::{Error, Result};

/// Output length when resampling `n` pixels from spacing `from` to `to`:
/// the physical extent divided by `to`, rounded half up.
pub fn resampled_len(n: usize, from: f64, to: f64) -> usize {
    libm::floor(n as f64 * from / to + 0.5).max(1.0) as usize
}

/// Resample to a new `(row, column)` spacing: bilinear for the image,
/// nearest neighbour for the mask. Pixel centres are aligned on the
/// physical extent. Equal spacings return the inputs unchanged.
pub fn resample(
    image: &Image,
    mask: Option<&LabelMap>,
    from: (f64, f64),
    to: (f64, f64),
) -> Result<(Image, Option<LabelMap>)> {
    for s in [from.0, from.1, to.0, to.1] {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pixel spacing must be positive, got {s}"
            )));
        }
    }
    if from == to {
        return Ok((image.clone(), mask.cloned()));
    }
    let (h, w) = image.dims();
    let (ho, wo) = (
        resampled_len(h, from.0, to.0),
        resampled_len(w, from.1, to.1),
    );
    let src = |i: usize, out_sp: f64, in_sp: f64| (i as f64 + 0.5) * out_sp / in_sp - 0.5;
    let img = Grid::from_fn(ho, wo, |y, x| {
        image.bilinear(src(y, to.0, from.0), src(x, to.1, from.1))
    });
    let msk = mask.map(|m| {
        Grid::from_fn(ho, wo, |y, x| {
            let sy = libm::floor(src(y, to.0, from.0) + 0.5) as isize;
            let sx = libm::floor(src(x, to.1, from.1) + 0.5) as isize;
            m.get_clamped(sy, sx)
        })
    });
    Ok((img, msk))
}

/// Centre crop, or symmetric zero padding (background for masks), to
/// `target × target`. Each axis is handled independently.
pub fn crop_or_pad<T: Copy>(grid: &Grid<T>, target: usize, fill: T) -> Grid<T> {
    crop_or_pad_to(grid, target, target, fill)
}

/// [`crop_or_pad`] with separate row and column targets.
pub fn crop_or_pad_to<T: Copy>(grid: &Grid<T>, rows: usize, cols: usize, fill: T) -> Grid<T> {
    let (h, w) = grid.dims();
    // offset of the output origin in input coordinates
    let off = |n: usize, target: usize| -> isize {
        if n >= target {
            ((n - target) / 2) as isize
        } else {
            -(((target - n) / 2) as isize)
        }
    };
    let (oy, ox) = (off(h, rows), off(w, cols));
    Grid::from_fn(rows, cols, |y, x| {
        let sy = y as isize + oy;
        let sx = x as isize + ox;
        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
            fill
        } else {
            grid.get(sy as usize, sx as usize)
        }
    })
}

/// Min-max scale to `[0, 1]`; constant images map to zero.
pub fn normalize_unit(image: &Image) -> Image {
    let (lo, hi) = image.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return image.map(|_| 0.0);
    }
    image.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub spacing: f64,
    pub size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            spacing: 1.25,
            size: 192,
        }
    }
}

/// Resample → crop/pad → normalize.
pub fn preprocess(sample: &Sample, config: &PreprocessConfig) -> Result<Sample> {
    let to = (config.spacing, config.spacing);
    let (image, mask) = resample(&sample.image, sample.mask.as_ref(), sample.spacing, to)?;
    let image = normalize_unit(&crop_or_pad(&image, config.size, 0.0));
    let mask = mask.map(|m| crop_or_pad(&m, config.size, BACKGROUND));
    Ok(Sample {
        image,
        mask,
        spacing: to,
        ..sample.clone()
    })
}
