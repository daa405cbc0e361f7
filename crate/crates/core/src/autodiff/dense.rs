use alloc::format;
use alloc::vec::Vec;

use super::tape::{slot, Ctx, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::Real;

impl<T: Real> Graph<T> {
    /// Fully connected layer `y = x·Wᵀ + b` with `W: [out, in]`. Inputs of
    /// rank above two are flattened to `[N, in]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "dense";
        let xs = self.shape(input);
        let n = xs[0];
        let fin: usize = xs[1..].iter().product();
        let (fout, win) = match *self.shape(weight) {
            [o, i] => (o, i),
            ref s => {
                return Err(Error::shape(
                    OP,
                    format!("weight must be [out, in], got {s:?}"),
                ))
            }
        };
        if win != fin {
            return Err(Error::shape(
                OP,
                format!("weight expects {win} inputs, got {fin}"),
            ));
        }
        if self.shape(bias) != [fout] {
            return Err(Error::shape(
                OP,
                format!("bias shape {:?} != [{fout}]", self.shape(bias)),
            ));
        }
        let b = self.data(bias);
        let mut out: Vec<T> = (0..n).flat_map(|_| b.iter().copied()).collect();
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            self.data(input),
            fin as isize,
            1,
            self.data(weight),
            1,
            fin as isize,
            T::one(),
            &mut out,
            fout as isize,
            1,
        );
        self.push_op(
            &[n, fout],
            out,
            &[input, weight, bias],
            Op::Dense {
                input,
                weight,
                bias,
            },
        )
    }
}

pub(crate) fn backward<T: Real>(
    ctx: &Ctx<'_, T>,
    input: Var,
    weight: Var,
    bias: Var,
    grads: &mut [Option<Vec<T>>],
) {
    let fout = ctx.value(bias).len();
    let x = ctx.value(input);
    let n = x.shape()[0];
    let fin = x.len() / n;
    let dy = ctx.out;
    if let Some(db) = slot(ctx.nodes, grads, bias) {
        for row in dy.chunks_exact(fout) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
    }
    if let Some(dw) = slot(ctx.nodes, grads, weight) {
        // dW[o, i] += Σ_n dY[n, o] · X[n, i]
        T::gemm(
            fout,
            n,
            fin,
            T::one(),
            dy,
            1,
            fout as isize,
            x.data(),
            fin as isize,
            1,
            T::one(),
            dw,
            fin as isize,
            1,
        );
    }
    if let Some(dx) = slot(ctx.nodes, grads, input) {
        let w = ctx.value(weight).data();
        // dX[n, i] += Σ_o dY[n, o] · W[o, i]
        T::gemm(
            n,
            fout,
            fin,
            T::one(),
            dy,
            fout as isize,
            1,
            w,
            fin as isize,
            1,
            T::one(),
            dx,
            fin as isize,
            1,
        );
    }
}
