use alloc::vec::Vec;

use crate::autodiff::Graph;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::nn::{Mode, NetworkParameters, NormConfig, PartitionSet, UNet};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-channel mean then per-channel population standard deviation of the
/// bottleneck activations of one image.
pub fn extract_embedding<T: Real>(
    unet: &UNet,
    params: &NetworkParameters<T>,
    image: &Image,
) -> Result<Vec<f64>> {
    let mut all = extract_embeddings(unet, params, core::slice::from_ref(image))?;
    Ok(all.pop().expect("one embedding"))
}

/// [`extract_embedding`] for many images, run one at a time.
pub fn extract_embeddings<T: Real>(
    unet: &UNet,
    params: &NetworkParameters<T>,
    images: &[Image],
) -> Result<Vec<Vec<f64>>> {
    let s = unet.config().input_size;
    images
        .iter()
        .map(|image| {
            if image.dims() != (s, s) {
                return Err(Error::shape(
                    "extract_embedding",
                    alloc::format!("expected {s}x{s}, got {:?}", image.dims()),
                ));
            }
            let x = Tensor::new(
                &[1, 1, s, s],
                image.data().iter().map(|&v| T::lit(v as f64)).collect(),
            )?;
            let mut g = Graph::new();
            let mut bound = params.bind(PartitionSet::NONE, Mode::Eval, NormConfig::default());
            let input = g.leaf(x);
            let out = unet.forward(&mut g, &mut bound, input)?;
            Ok(channel_moments(
                g.shape(out.bottleneck)[1],
                g.data(out.bottleneck),
            ))
        })
        .collect()
}

pub(super) fn channel_moments<T: Real>(channels: usize, data: &[T]) -> Vec<f64> {
    let per = data.len() / channels;
    let mut means = Vec::with_capacity(channels);
    let mut stds = Vec::with_capacity(channels);
    for c in data.chunks(per) {
        let first = c[0].as_f64();
        if c.iter().all(|v| v.as_f64() == first) {
            means.push(first);
            stds.push(0.0);
            continue;
        }
        let mean = c.iter().map(|v| v.as_f64()).sum::<f64>() / per as f64;
        let var = c
            .iter()
            .map(|v| {
                let d = v.as_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / per as f64;
        means.push(mean);
        stds.push(libm::sqrt(var));
    }
    means.extend(stds);
    means
}
