use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Image, Sample};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn stack<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
    let (h, w) = images
        .first()
        .map(|i| i.dims())
        .ok_or(Error::DegenerateBatch {
            op: "batch",
            count: 0,
        })?;
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::shape(
                "batch",
                format!("mixed image sizes {:?} and {:?}", (h, w), img.dims()),
            ));
        }
        data.extend(img.data().iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::new(&[images.len(), 1, h, w], data)
}

/// Images with one-hot segmentation targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SegBatch<T> {
    /// `[N, 1, H, W]`.
    pub images: Tensor<T>,
    /// `[N, K, H, W]` one-hot.
    pub targets: Tensor<T>,
}

impl<T: Real> SegBatch<T> {
    /// Pair each image with its sample's mask. Any unlabelled sample is an
    /// error.
    pub fn from_samples(samples: &[(&Sample, Image)], classes: usize) -> Result<Self> {
        let images: Vec<&Image> = samples.iter().map(|(_, i)| i).collect();
        let x = stack(&images)?;
        let (n, _, h, w) = x.dims4("seg_batch")?;
        let mut t = alloc::vec![T::zero(); n * classes * h * w];
        for (i, (s, img)) in samples.iter().enumerate() {
            let mask = s
                .mask
                .as_ref()
                .ok_or(Error::UnlabelledSample { index: i })?;
            if mask.dims() != img.dims() {
                return Err(Error::shape(
                    "seg_batch",
                    format!("mask {:?} vs image {:?}", mask.dims(), img.dims()),
                ));
            }
            for (p, &l) in mask.data().iter().enumerate() {
                let l = l as usize;
                if l >= classes {
                    return Err(Error::InvalidArgument(format!(
                        "label {l} out of range in sample {}",
                        s.id
                    )));
                }
                t[(i * classes + l) * h * w + p] = T::one();
            }
        }
        Ok(Self {
            images: x,
            targets: Tensor::new(&[n, classes, h, w], t)?,
        })
    }
}

/// Images with one-hot domain labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch<T> {
    pub images: Tensor<T>,
    /// `[N, D]` one-hot.
    pub targets: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> DomainBatch<T> {
    /// Label each image by the position of its sample's domain in
    /// `domains`.
    pub fn from_samples(samples: &[(&Sample, Image)], domains: &[String]) -> Result<Self> {
        let images: Vec<&Image> = samples.iter().map(|(_, i)| i).collect();
        let x = stack(&images)?;
        let d = domains.len();
        let mut labels = Vec::with_capacity(samples.len());
        let mut t = alloc::vec![T::zero(); samples.len() * d];
        for (i, (s, _)) in samples.iter().enumerate() {
            let k = domains
                .iter()
                .position(|id| *id == s.domain_id)
                .ok_or_else(|| Error::UnknownDomain(s.domain_id.clone()))?;
            labels.push(k);
            t[i * d + k] = T::one();
        }
        Ok(Self {
            images: x,
            targets: Tensor::new(&[samples.len(), d], t)?,
            labels,
        })
    }
}
