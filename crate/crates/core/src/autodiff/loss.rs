use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::activation::class_axis;
use super::tape::{slot, Ctx, Graph, Op, Var};
use super::{DICE_EPS, PROB_EPS};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn check_one_hot<T: Real>(target: &Tensor<T>, op: &'static str) -> Result<()> {
    let (n, k, inner) = class_axis(target.shape(), op)?;
    let t = target.data();
    for (i, &v) in t.iter().enumerate() {
        if v != T::zero() && v != T::one() {
            return Err(Error::NotOneHot { op, index: i });
        }
    }
    for b in 0..n {
        for i in 0..inner {
            let ones = (0..k)
                .filter(|&j| t[(b * k + j) * inner + i] == T::one())
                .count();
            if ones != 1 {
                return Err(Error::NotOneHot {
                    op,
                    index: b * k * inner + i,
                });
            }
        }
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    fn check_target(&self, probs: Var, target: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape(probs) != target.shape() {
            return Err(Error::shape(
                op,
                format!(
                    "probs {:?} vs target {:?}",
                    self.shape(probs),
                    target.shape()
                ),
            ));
        }
        check_one_hot(target, op)
    }

    /// Mean over pixels (and batch) of `−Σ_k t_k log p_k`, with `p` clamped
    /// below at [`PROB_EPS`].
    pub fn cross_entropy(&mut self, probs: Var, target: &Tensor<T>) -> Result<Var> {
        self.check_target(probs, target, "cross_entropy")?;
        let (n, _, inner) = class_axis(target.shape(), "cross_entropy")?;
        let eps = T::lit(PROB_EPS);
        let total: T = self
            .data(probs)
            .iter()
            .zip(target.data())
            .filter(|(_, &t)| t != T::zero())
            .map(|(&p, &t)| -t * p.max(eps).ln())
            .sum();
        let loss = total / T::lit((n * inner) as f64);
        let target = target.data().to_vec();
        self.push_op(
            &[1],
            vec![loss],
            &[probs],
            Op::CrossEntropy { probs, target },
        )
    }

    /// `1 − mean_k (2Σpt + ε) / (Σp + Σt + ε)` over foreground classes
    /// `k ≥ 1`; sums run over batch and pixels.
    pub fn soft_dice_loss(&mut self, probs: Var, target: &Tensor<T>) -> Result<Var> {
        self.check_target(probs, target, "soft_dice_loss")?;
        let (_, k, _) = class_axis(target.shape(), "soft_dice_loss")?;
        if k < 2 {
            return Err(Error::shape(
                "soft_dice_loss",
                "need at least one foreground class",
            ));
        }
        let terms = dice_terms(self.data(probs), target.data(), target.shape());
        let eps = T::lit(DICE_EPS);
        let mean: T = terms
            .iter()
            .map(|&(i, p, t)| (T::lit(2.0) * i + eps) / (p + t + eps))
            .sum::<T>()
            / T::lit((k - 1) as f64);
        let target = target.data().to_vec();
        self.push_op(
            &[1],
            vec![T::one() - mean],
            &[probs],
            Op::SoftDice { probs, target },
        )
    }
}

/// `(Σpt, Σp, Σt)` per foreground class.
fn dice_terms<T: Real>(p: &[T], t: &[T], shape: &[usize]) -> Vec<(T, T, T)> {
    let (n, k, inner) = class_axis(shape, "soft_dice_loss").expect("validated");
    (1..k)
        .map(|j| {
            let mut acc = (T::zero(), T::zero(), T::zero());
            for b in 0..n {
                let off = (b * k + j) * inner;
                for i in off..off + inner {
                    acc.0 += p[i] * t[i];
                    acc.1 += p[i];
                    acc.2 += t[i];
                }
            }
            acc
        })
        .collect()
}

pub(crate) fn cross_entropy_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    probs: Var,
    target: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let pv = ctx.value(probs);
    let (n, _, inner) = class_axis(pv.shape(), "cross_entropy").expect("validated");
    let scale = ctx.out[0] / T::lit((n * inner) as f64);
    let eps = T::lit(PROB_EPS);
    let p = pv.data();
    if let Some(dp) = slot(ctx.nodes, grads, probs) {
        for i in 0..p.len() {
            // the clamp has zero slope below eps
            if target[i] != T::zero() && p[i] >= eps {
                dp[i] -= scale * target[i] / p[i];
            }
        }
    }
}

pub(crate) fn soft_dice_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    probs: Var,
    target: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let pv = ctx.value(probs);
    let shape = pv.shape();
    let (n, k, inner) = class_axis(shape, "soft_dice_loss").expect("validated");
    let terms = dice_terms(pv.data(), target, shape);
    let eps = T::lit(DICE_EPS);
    let two = T::lit(2.0);
    let scale = -ctx.out[0] / T::lit((k - 1) as f64);
    if let Some(dp) = slot(ctx.nodes, grads, probs) {
        for (j, &(i_sum, p_sum, t_sum)) in (1..k).zip(&terms) {
            let den = p_sum + t_sum + eps;
            let num = two * i_sum + eps;
            let inv = T::one() / (den * den);
            for b in 0..n {
                let off = (b * k + j) * inner;
                for i in off..off + inner {
                    dp[i] += scale * (two * target[i] * den - num) * inv;
                }
            }
        }
    }
}
