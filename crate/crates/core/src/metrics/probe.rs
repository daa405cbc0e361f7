use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of each domain used for fitting.
    pub train_fraction: f64,
    pub min_per_domain: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.1,
            train_fraction: 0.5,
            min_per_domain: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub chance: f64,
    pub domains: usize,
    pub train_count: usize,
    pub test_count: usize,
}

/// Held-out accuracy of a softmax-regression classifier predicting the
/// domain label from each embedding. The split is stratified per domain
/// and shuffled by `seed`; features are standardized with training
/// statistics; weights start at zero and follow full-batch gradient
/// descent on the mean cross-entropy.
pub fn domain_probe(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    seed: u64,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    if embeddings.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    if dim == 0 || embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::InvalidArgument(
            "embeddings must share one non-zero length".into(),
        ));
    }
    let mut by_domain: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_domain.entry(l).or_default().push(i);
    }
    if by_domain.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "probe needs at least 2 domains, got {}",
            by_domain.len()
        )));
    }
    if let Some((d, v)) = by_domain
        .iter()
        .find(|(_, v)| v.len() < config.min_per_domain)
    {
        return Err(Error::InsufficientSamples(format!(
            "domain {d} has {} samples, probe needs {}",
            v.len(),
            config.min_per_domain
        )));
    }
    let classes: Vec<usize> = by_domain.keys().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut rng = rng_for(seed, &[0x9b0be]);
    for idx in by_domain.values() {
        let mut idx = idx.clone();
        idx.shuffle(&mut rng);
        let cut = (libm::round(idx.len() as f64 * config.train_fraction) as usize)
            .clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    let class_of = |i: usize| classes.binary_search(&labels[i]).expect("known label");

    let mut mean = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for &i in &train {
        for (m, v) in mean.iter_mut().zip(&embeddings[i]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    for &i in &train {
        for ((s, m), v) in sd.iter_mut().zip(&mean).zip(&embeddings[i]) {
            *s += (v - m) * (v - m);
        }
    }
    sd.iter_mut().for_each(|s| {
        *s = libm::sqrt(*s / train.len() as f64);
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    });
    let standardize = |i: usize| -> Vec<f64> {
        embeddings[i]
            .iter()
            .zip(&mean)
            .zip(&sd)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    };
    let xtr: Vec<Vec<f64>> = train.iter().map(|&i| standardize(i)).collect();
    let ytr: Vec<usize> = train.iter().map(|&i| class_of(i)).collect();

    let k = classes.len();
    let mut w = vec![vec![0.0; dim]; k];
    let mut b = vec![0.0; k];
    let logits = |w: &[Vec<f64>], b: &[f64], x: &[f64]| -> Vec<f64> {
        w.iter()
            .zip(b)
            .map(|(row, bias)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bias)
            .collect()
    };
    let n = xtr.len() as f64;
    for _ in 0..config.epochs {
        let mut gw = vec![vec![0.0; dim]; k];
        let mut gb = vec![0.0; k];
        for (x, &y) in xtr.iter().zip(&ytr) {
            let z = logits(&w, &b, x);
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| libm::exp(v - zmax)).collect();
            let total: f64 = e.iter().sum();
            for c in 0..k {
                let d = e[c] / total - if c == y { 1.0 } else { 0.0 };
                gb[c] += d;
                for (g, xv) in gw[c].iter_mut().zip(x) {
                    *g += d * xv;
                }
            }
        }
        for c in 0..k {
            b[c] -= config.learning_rate * gb[c] / n;
            for (wv, g) in w[c].iter_mut().zip(&gw[c]) {
                *wv -= config.learning_rate * g / n;
            }
        }
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let z = logits(&w, &b, &standardize(i));
            let mut best = 0;
            for c in 1..k {
                if z[c] > z[best] {
                    best = c;
                }
            }
            best == class_of(i)
        })
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / test.len() as f64,
        chance: 1.0 / k as f64,
        domains: k,
        train_count: train.len(),
        test_count: test.len(),
    })
}
