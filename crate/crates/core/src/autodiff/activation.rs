use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::{slot, Ctx, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::Real;

/// `(outer, classes, inner)` for a softmax over axis 1.
pub(crate) fn class_axis(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(
            op,
            format!("need a class axis, got shape {shape:?}"),
        ));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Real> Graph<T> {
    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = x
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = x.shape().to_vec();
        self.push_op(&shape, out, &[input], Op::Relu { input })
    }

    /// Softmax along axis 1 (`[N, K]` or `[N, K, H, W]`).
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        let (n, k, inner) = class_axis(&shape, "softmax")?;
        let xd = x.data();
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            let base = b * k * inner;
            for i in 0..inner {
                let at = |j: usize| base + j * inner + i;
                let max = (0..k).map(|j| xd[at(j)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for j in 0..k {
                    let e = (xd[at(j)] - max).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..k {
                    out[at(j)] /= z;
                }
            }
        }
        self.push_op(&shape, out, &[input], Op::Softmax { input })
    }
}

pub(crate) fn relu_backward<T: Real>(ctx: &Ctx<'_, T>, input: Var, grads: &mut [Option<Vec<T>>]) {
    let x = ctx.value(input).data();
    if let Some(dx) = slot(ctx.nodes, grads, input) {
        for ((d, &g), &xi) in dx.iter_mut().zip(ctx.out).zip(x) {
            if xi > T::zero() {
                *d += g;
            }
        }
    }
}

pub(crate) fn softmax_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    input: Var,
    grads: &mut [Option<Vec<T>>],
) {
    let shape = ctx.value(input).shape();
    let (n, k, inner) = class_axis(shape, "softmax").expect("validated in forward");
    let y = ctx.out_value;
    let dy = ctx.out;
    if let Some(dx) = slot(ctx.nodes, grads, input) {
        for b in 0..n {
            let base = b * k * inner;
            for i in 0..inner {
                let at = |j: usize| base + j * inner + i;
                let dot: T = (0..k).map(|j| dy[at(j)] * y[at(j)]).sum();
                for j in 0..k {
                    dx[at(j)] += y[at(j)] * (dy[at(j)] - dot);
                }
            }
        }
    }
}
