use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::grid::{Grid, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaheConfig {
    /// Tiles per axis; reduced to the image extent on small images.
    pub tiles: usize,
    /// Histogram clip limit as a multiple of the mean bin count.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        Self {
            tiles: 8,
            clip_limit: 2.0,
            bins: 256,
        }
    }
}

fn bin_of(v: f32, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) as f64 * bins as f64) as usize).min(bins - 1)
}

/// Tile boundaries `[start, end)` along one axis.
fn bounds(n: usize, tiles: usize) -> Vec<(usize, usize)> {
    (0..tiles)
        .map(|t| (t * n / tiles, (t + 1) * n / tiles))
        .collect()
}

/// Clipped, redistributed cumulative histogram normalized to `[0, 1]`.
fn tile_lut(
    image: &Image,
    rows: (usize, usize),
    cols: (usize, usize),
    config: &ClaheConfig,
) -> Vec<f64> {
    let bins = config.bins;
    let mut hist = vec![0usize; bins];
    for y in rows.0..rows.1 {
        for x in cols.0..cols.1 {
            hist[bin_of(image.get(y, x), bins)] += 1;
        }
    }
    let area = (rows.1 - rows.0) * (cols.1 - cols.0);
    if config.clip_limit > 0.0 {
        let limit = ((config.clip_limit * area as f64 / bins as f64) as usize).max(1);
        let mut excess = 0;
        for h in hist.iter_mut() {
            if *h > limit {
                excess += *h - limit;
                *h = limit;
            }
        }
        let share = excess / bins;
        let rest = excess - share * bins;
        for h in hist.iter_mut() {
            *h += share;
        }
        if let Some(step) = bins.checked_div(rest) {
            for b in (0..bins).step_by(step.max(1)).take(rest) {
                hist[b] += 1;
            }
        }
    }
    let mut acc = 0usize;
    hist.iter()
        .map(|&h| {
            acc += h;
            acc as f64 / area as f64
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization of a `[0, 1]` image.
///
/// Each tile gets a clipped-histogram equalization lookup table; pixels
/// blend the tables of the four nearest tile centres bilinearly.
pub fn clahe(image: &Image, config: &ClaheConfig) -> Image {
    let (h, w) = image.dims();
    let bins = config.bins.max(2);
    let config = ClaheConfig {
        bins,
        ..config.clone()
    };
    let ty = config.tiles.clamp(1, h);
    let tx = config.tiles.clamp(1, w);
    let rb = bounds(h, ty);
    let cb = bounds(w, tx);
    let luts: Vec<Vec<f64>> = rb
        .iter()
        .flat_map(|&r| cb.iter().map(move |&c| (r, c)))
        .map(|(r, c)| tile_lut(image, r, c, &config))
        .collect();
    let centre = |b: &(usize, usize)| (b.0 + b.1) as f64 / 2.0 - 0.5;
    let rc: Vec<f64> = rb.iter().map(centre).collect();
    let cc: Vec<f64> = cb.iter().map(centre).collect();
    // neighbouring tile indices and blend weight towards the second
    let locate = |p: f64, centres: &[f64]| -> (usize, usize, f64) {
        let n = centres.len();
        if p <= centres[0] {
            return (0, 0, 0.0);
        }
        if p >= centres[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let i = centres.iter().rposition(|&c| c <= p).unwrap_or(0);
        let t = (p - centres[i]) / (centres[i + 1] - centres[i]);
        (i, i + 1, t)
    };
    Grid::from_fn(h, w, |y, x| {
        let b = bin_of(image.get(y, x), bins);
        let (y0, y1, wy) = locate(y as f64, &rc);
        let (x0, x1, wx) = locate(x as f64, &cc);
        let at = |r: usize, c: usize| luts[r * tx + c][b];
        let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
        let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
        (top * (1.0 - wy) + bottom * wy).clamp(0.0, 1.0) as f32
    })
}

/// Final contrast normalization before the network: CLAHE when configured,
/// otherwise the image unchanged.
pub fn contrast_normalize(image: &Image, config: Option<&ClaheConfig>) -> Image {
    match config {
        Some(c) => clahe(image, c),
        None => image.clone(),
    }
}
