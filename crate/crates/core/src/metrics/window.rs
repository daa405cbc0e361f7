use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Graph;
use crate::data::{crop_or_pad_to, Grid, Image, LabelMap};
use crate::error::{Error, Result};
use crate::nn::{Mode, NetworkParameters, NormConfig, PartitionSet, UNet};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-class probability planes, `data[k][y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Vec<f64>>,
}

impl ProbMap {
    pub fn classes(&self) -> usize {
        self.data.len()
    }

    /// Most probable class per pixel; ties go to the lower class.
    pub fn argmax(&self) -> LabelMap {
        Grid::from_fn(self.height, self.width, |y, x| {
            let i = y * self.width + x;
            let mut best = 0;
            for k in 1..self.data.len() {
                if self.data[k][i] > self.data[best][i] {
                    best = k;
                }
            }
            best as u8
        })
    }
}

/// Anything that maps a `window × window` patch to class probabilities.
pub trait Predictor {
    fn window(&self) -> usize;
    fn classes(&self) -> usize;
    /// Probabilities for one patch, class-major.
    fn predict(&self, patch: &Image) -> Result<Vec<Vec<f64>>>;
}

/// A trained segmenter in inference mode.
pub struct SegmenterPredictor<'a, T> {
    pub unet: &'a UNet,
    pub params: &'a NetworkParameters<T>,
}

impl<T: Real> Predictor for SegmenterPredictor<'_, T> {
    fn window(&self) -> usize {
        self.unet.config().input_size
    }

    fn classes(&self) -> usize {
        self.unet.config().classes
    }

    fn predict(&self, patch: &Image) -> Result<Vec<Vec<f64>>> {
        let s = self.window();
        let x = Tensor::new(
            &[1, 1, s, s],
            patch.data().iter().map(|&v| T::lit(v as f64)).collect(),
        )?;
        let mut g = Graph::new();
        let mut bound = self
            .params
            .bind(PartitionSet::NONE, Mode::Eval, NormConfig::default());
        let input = g.leaf(x);
        let out = self.unet.forward(&mut g, &mut bound, input)?;
        let probs = g.data(out.probs);
        Ok(probs
            .chunks(s * s)
            .map(|c| c.iter().map(|v| v.as_f64()).collect())
            .collect())
    }
}

/// Top-left offsets of the windows along one axis of length `len`: a
/// single window when it fits exactly, otherwise at least three evenly
/// spread windows with the outer ones flush with the edges and no gap
/// between neighbours.
pub fn window_origins(len: usize, window: usize) -> Vec<usize> {
    if len <= window {
        return vec![0];
    }
    let span = len - window;
    let n = 3.max(span.div_ceil(window) + 1);
    (0..n)
        .map(|i| ((i * span) as f64 / (n - 1) as f64 + 0.5) as usize)
        .collect()
}

/// Whole-image class probabilities from overlapping windows, averaged
/// where they overlap. Axes shorter than the window are padded
/// symmetrically and cropped back afterwards.
pub fn sliding_window_predict<P: Predictor + ?Sized>(
    predictor: &P,
    image: &Image,
) -> Result<ProbMap> {
    let w = predictor.window();
    let k = predictor.classes();
    let (h0, w0) = image.dims();
    let (ph, pw) = (h0.max(w), w0.max(w));
    let padded = if (ph, pw) == (h0, w0) {
        image.clone()
    } else {
        crop_or_pad_to(image, ph, pw, 0.0)
    };
    let mut mean = vec![vec![0.0f64; ph * pw]; k];
    let mut count = vec![0u32; ph * pw];
    for &oy in &window_origins(ph, w) {
        for &ox in &window_origins(pw, w) {
            let patch = Grid::from_fn(w, w, |y, x| padded.get(oy + y, ox + x));
            let probs = predictor.predict(&patch)?;
            if probs.len() != k || probs.iter().any(|p| p.len() != w * w) {
                return Err(Error::shape(
                    "sliding_window",
                    "predictor returned wrong shape",
                ));
            }
            for y in 0..w {
                for x in 0..w {
                    let i = (oy + y) * pw + ox + x;
                    count[i] += 1;
                    let c = count[i] as f64;
                    // running mean: exact when every window agrees
                    for (plane, p) in mean.iter_mut().zip(&probs) {
                        let v = p[y * w + x];
                        plane[i] = if count[i] == 1 {
                            v
                        } else {
                            plane[i] + (v - plane[i]) / c
                        };
                    }
                }
            }
        }
    }
    debug_assert!(count.iter().all(|&c| c > 0));
    let data = if (ph, pw) == (h0, w0) {
        mean
    } else {
        mean.into_iter()
            .map(|plane| {
                crop_or_pad_to(&Grid::new(ph, pw, plane).expect("plane size"), h0, w0, 0.0)
                    .into_data()
            })
            .collect()
    };
    Ok(ProbMap {
        height: h0,
        width: w0,
        data,
    })
}
