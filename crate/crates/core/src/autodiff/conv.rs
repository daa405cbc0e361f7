use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tape::{slot, Ctx, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::Real;

/// Spatial padding of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding of `k / 2`; preserves `H, W` at stride 1.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) struct Conv2dNode<T> {
    input: Var,
    kernel: Var,
    bias: Var,
    geom: ConvGeom,
    /// im2col buffer, kept only when the kernel needs a gradient.
    cols: Vec<T>,
}

/// Output columns `ox` whose input column `ox·stride + kx − pad` lies inside
/// `0..w`.
fn valid_range(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = if kx >= g.pad {
        0
    } else {
        (g.pad - kx).div_ceil(g.stride)
    };
    let hi = if g.w + g.pad <= kx {
        0
    } else {
        (g.w + g.pad - kx).div_ceil(g.stride).min(g.wo)
    };
    (lo.min(hi), hi)
}

/// Unfold sample `n` into columns `n·Ho·Wo ..` of a `[C·k·k, N·Ho·Wo]`
/// matrix.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, n: usize, cols: &mut [T]) {
    let p = g.positions();
    let stride = g.n * p;
    let base = n * g.c * g.h * g.w;
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * stride + n * p..row * stride + (n + 1) * p];
                let (lo, hi) = valid_range(g, kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        line.fill(T::zero());
                        continue;
                    }
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let src = &x[base + (c * g.h + iy as usize) * g.w..];
                    let first = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (d, s) in line[lo..hi]
                            .iter_mut()
                            .zip(src[first..].iter().step_by(g.stride))
                        {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the sample-`n` columns of a `[C·k·k, N·Ho·Wo]` matrix back
/// onto sample `n`.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, n: usize, dx: &mut [T]) {
    let p = g.positions();
    let stride = g.n * p;
    let base = n * g.c * g.h * g.w;
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * stride + n * p..row * stride + (n + 1) * p];
                let (lo, hi) = valid_range(g, kx);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[base + (c * g.h + iy as usize) * g.w..];
                    let line = &src[oy * g.wo + lo..oy * g.wo + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// 2D cross-correlation of `[N, C, H, W]` input with `[F, C, k, k]`
    /// kernels plus a per-filter bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let (n, c, h, w) = self.value(input).dims4(OP)?;
        let (f, kc, k, k2) = self.value(kernel).dims4(OP)?;
        if k != k2 || k % 2 == 0 {
            return Err(Error::shape(
                OP,
                format!("kernel must be square with odd size, got {k}x{k2}"),
            ));
        }
        if kc != c {
            return Err(Error::shape(
                OP,
                format!("kernel expects {kc} input channels, input has {c}"),
            ));
        }
        if self.shape(bias) != [f] {
            return Err(Error::shape(
                OP,
                format!("bias shape {:?} != [{f}]", self.shape(bias)),
            ));
        }
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be positive"));
        }
        let pad = match padding {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(
                OP,
                format!("input {h}x{w} smaller than kernel {k}x{k}"),
            ));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            f,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let (kk, p) = (geom.patch(), geom.positions());

        let keep_cols = self.requires_grad(kernel);
        let np = n * p;
        let mut cols = vec![T::zero(); kk * np];
        let mut out = vec![T::zero(); n * f * p];
        {
            let x = self.data(input);
            let wt = self.data(kernel);
            let b = self.data(bias);
            for s in 0..n {
                im2col(x, &geom, s, &mut cols);
            }
            // one product over the whole batch: [F, kk] · [kk, N·P]
            let mut y = vec![T::zero(); f * np];
            T::gemm(
                f,
                kk,
                np,
                T::one(),
                wt,
                kk as isize,
                1,
                &cols,
                np as isize,
                1,
                T::zero(),
                &mut y,
                np as isize,
                1,
            );
            for s in 0..n {
                for fi in 0..f {
                    let src = &y[fi * np + s * p..fi * np + (s + 1) * p];
                    let dst = &mut out[(s * f + fi) * p..(s * f + fi + 1) * p];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v + b[fi];
                    }
                }
            }
        }
        if !keep_cols {
            cols = Vec::new();
        }
        let node = Conv2dNode {
            input,
            kernel,
            bias,
            geom,
            cols,
        };
        self.push_op(
            &[n, f, ho, wo],
            out,
            &[input, kernel, bias],
            Op::Conv2d(node),
        )
    }
}

pub(crate) fn backward<T: Real>(
    ctx: &Ctx<'_, T>,
    node: &Conv2dNode<T>,
    grads: &mut [Option<Vec<T>>],
) {
    let g = node.geom;
    let (kk, p, f) = (g.patch(), g.positions(), g.f);
    let np = g.n * p;
    let dy = ctx.out;

    if let Some(db) = slot(ctx.nodes, grads, node.bias) {
        for s in 0..g.n {
            for (fi, row) in dy[s * f * p..(s + 1) * f * p].chunks_exact(p).enumerate() {
                db[fi] += row.iter().copied().sum::<T>();
            }
        }
    }
    let wants_dw = ctx.nodes[node.kernel.index()].tensor.requires_grad();
    let wants_dx = ctx.nodes[node.input.index()].tensor.requires_grad();
    if !wants_dw && !wants_dx {
        return;
    }
    // dY regrouped as [F, N·P]
    let mut dyt = vec![T::zero(); f * np];
    for s in 0..g.n {
        for fi in 0..f {
            dyt[fi * np + s * p..fi * np + (s + 1) * p]
                .copy_from_slice(&dy[(s * f + fi) * p..(s * f + fi + 1) * p]);
        }
    }
    if let Some(dw) = slot(ctx.nodes, grads, node.kernel) {
        // dW[f, q] += Σ dY[f, ·] · cols[q, ·]
        T::gemm(
            f,
            np,
            kk,
            T::one(),
            &dyt,
            np as isize,
            1,
            &node.cols,
            1,
            np as isize,
            T::one(),
            dw,
            kk as isize,
            1,
        );
    }
    if let Some(dx) = slot(ctx.nodes, grads, node.input) {
        let wt = ctx.value(node.kernel).data();
        // dcols[q, ·] = Σ_f W[f, q] · dY[f, ·]
        let mut dcols = vec![T::zero(); kk * np];
        T::gemm(
            kk,
            f,
            np,
            T::one(),
            wt,
            1,
            kk as isize,
            &dyt,
            np as isize,
            1,
            T::zero(),
            &mut dcols,
            np as isize,
            1,
        );
        for s in 0..g.n {
            col2im(&dcols, &g, s, dx);
        }
    }
}
