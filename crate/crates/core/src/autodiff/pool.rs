use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::{slot, Ctx, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::Real;

impl<T: Real> Graph<T> {
    /// 2×2 max pooling with stride 2. The first maximum in row-major window
    /// order receives the gradient.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("maxpool2d")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "maxpool2d",
                format!("spatial size {h}x{w} is not even"),
            ));
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.data(input);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        self.push_op(
            &[n, c, ho, wo],
            out,
            &[input],
            Op::MaxPool { input, argmax },
        )
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample_nearest2x(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("upsample_nearest2x")?;
        let x = self.data(input);
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for plane in 0..n * c {
            for y in 0..ho {
                let src = &x[(plane * h + y / 2) * w..(plane * h + y / 2 + 1) * w];
                let dst = &mut out[(plane * ho + y) * wo..(plane * ho + y + 1) * wo];
                for (xo, d) in dst.iter_mut().enumerate() {
                    *d = src[xo / 2];
                }
            }
        }
        self.push_op(&[n, c, ho, wo], out, &[input], Op::Upsample { input })
    }

    /// Mean over the spatial axes: `[N, C, H, W] → [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("global_avg_pool")?;
        let inner = h * w;
        let scale = T::lit(inner as f64);
        let out = self
            .data(input)
            .chunks_exact(inner)
            .map(|p| p.iter().copied().sum::<T>() / scale)
            .collect();
        self.push_op(&[n, c], out, &[input], Op::GlobalAvgPool { input })
    }
}

pub(crate) fn maxpool_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    input: Var,
    argmax: &[usize],
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(dx) = slot(ctx.nodes, grads, input) {
        for (&i, &g) in argmax.iter().zip(ctx.out) {
            dx[i] += g;
        }
    }
}

pub(crate) fn upsample_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    input: Var,
    grads: &mut [Option<Vec<T>>],
) {
    let (n, c, h, w) = ctx
        .value(input)
        .dims4("upsample_nearest2x")
        .expect("validated");
    let wo = 2 * w;
    if let Some(dx) = slot(ctx.nodes, grads, input) {
        for plane in 0..n * c {
            for y in 0..2 * h {
                for xo in 0..wo {
                    dx[(plane * h + y / 2) * w + xo / 2] += ctx.out[(plane * 2 * h + y) * wo + xo];
                }
            }
        }
    }
}

pub(crate) fn gap_backward<T: Real>(ctx: &Ctx<'_, T>, input: Var, grads: &mut [Option<Vec<T>>]) {
    let (_, _, h, w) = ctx
        .value(input)
        .dims4("global_avg_pool")
        .expect("validated");
    let inner = h * w;
    let scale = T::one() / T::lit(inner as f64);
    if let Some(dx) = slot(ctx.nodes, grads, input) {
        for (plane, &g) in dx.chunks_exact_mut(inner).zip(ctx.out) {
            for d in plane {
                *d += g * scale;
            }
        }
    }
}
