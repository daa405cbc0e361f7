use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tape::{slot, Ctx, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::Real;

/// Per-channel running mean and (biased) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics; running statistics move as
    /// `momentum · old + (1 − momentum) · batch`.
    Train { momentum: f64 },
    /// Normalize with running statistics.
    Eval,
}

pub(crate) struct BatchNormNode<T> {
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
    c: usize,
    inner: usize,
}

impl<T: Real> Graph<T> {
    /// Batch normalization over `(N, H, W)` per channel of an `[N, C, H, W]`
    /// input. In train mode the updated running statistics are returned
    /// rather than written, so eval-mode calls never mutate state.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &BatchNormStats<T>,
        mode: BatchNormMode,
        eps: f64,
    ) -> Result<(Var, Option<BatchNormStats<T>>)> {
        const OP: &str = "batchnorm2d";
        let (n, c, h, w) = self.value(input).dims4(OP)?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    OP,
                    format!("{name} shape {:?} != [{c}]", self.shape(v)),
                ));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(Error::shape(
                OP,
                format!("running statistics do not have {c} channels"),
            ));
        }
        let inner = h * w;
        let count = n * inner;
        let x = self.data(input);
        let eps = T::lit(eps);

        let (mean, var, update) = match mode {
            BatchNormMode::Train { momentum } => {
                if count < 2 {
                    return Err(Error::DegenerateBatch { op: OP, count });
                }
                let cnt = T::lit(count as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        let off = (b * c + ch) * inner;
                        s += x[off..off + inner].iter().copied().sum::<T>();
                    }
                    let m = s / cnt;
                    let mut v = T::zero();
                    for b in 0..n {
                        let off = (b * c + ch) * inner;
                        for &xi in &x[off..off + inner] {
                            let d = xi - m;
                            v += d * d;
                        }
                    }
                    mean[ch] = m;
                    var[ch] = v / cnt;
                }
                let mom = T::lit(momentum);
                let keep = T::one() - mom;
                let updated = BatchNormStats {
                    mean: running
                        .mean
                        .iter()
                        .zip(&mean)
                        .map(|(&o, &b)| mom * o + keep * b)
                        .collect(),
                    var: running
                        .var
                        .iter()
                        .zip(&var)
                        .map(|(&o, &b)| mom * o + keep * b)
                        .collect(),
                };
                (mean, var, Some(updated))
            }
            BatchNormMode::Eval => (running.mean.clone(), running.var.clone(), None),
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gm = self.data(gamma);
        let bt = self.data(beta);
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gm[ch] * xh + bt[ch];
                }
            }
        }
        let node = BatchNormNode {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            train: update.is_some(),
            c,
            inner,
        };
        let v = self.push_op(
            &[n, c, h, w],
            out,
            &[input, gamma, beta],
            Op::BatchNorm(node),
        )?;
        Ok((v, update))
    }
}

pub(crate) fn backward<T: Real>(
    ctx: &Ctx<'_, T>,
    node: &BatchNormNode<T>,
    grads: &mut [Option<Vec<T>>],
) {
    let (c, inner) = (node.c, node.inner);
    let dy = ctx.out;
    let n = dy.len() / (c * inner);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                sum_dy[ch] += dy[i];
                sum_dy_xhat[ch] += dy[i] * node.xhat[i];
            }
        }
    }
    if let Some(dg) = slot(ctx.nodes, grads, node.gamma) {
        for ch in 0..c {
            dg[ch] += sum_dy_xhat[ch];
        }
    }
    if let Some(db) = slot(ctx.nodes, grads, node.beta) {
        for ch in 0..c {
            db[ch] += sum_dy[ch];
        }
    }
    let gamma = ctx.value(node.gamma).data().to_vec();
    if let Some(dx) = slot(ctx.nodes, grads, node.input) {
        let m = T::lit((n * inner) as f64);
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                let scale = gamma[ch] * node.inv_std[ch];
                for i in off..off + inner {
                    dx[i] += if node.train {
                        scale * (dy[i] - sum_dy[ch] / m - node.xhat[i] * sum_dy_xhat[ch] / m)
                    } else {
                        scale * dy[i]
                    };
                }
            }
        }
    }
}
