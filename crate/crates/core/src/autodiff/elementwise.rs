use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::{slot, Ctx, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::Real;

impl<T: Real> Graph<T> {
    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "add")?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        self.push_op(&shape, out, &[a, b], Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "mul")?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        self.push_op(&shape, out, &[a, b], Op::Mul { a, b })
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let out = self.data(input).iter().map(|&x| x * factor).collect();
        self.push_op(&shape, out, &[input], Op::Scale { input, factor })
    }

    /// Sum of all elements.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.data(input).iter().copied().sum();
        self.push_op(&[1], vec![s], &[input], Op::Sum { input })
    }

    /// Concatenate along axis 1; all other axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape("concat", format!("{sa:?} vs {sb:?}")));
        }
        let n = sa[0];
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1], sb[1]);
        let mut shape = sa.to_vec();
        shape[1] = ca + cb;
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(da.len() + db.len());
        for i in 0..n {
            out.extend_from_slice(&da[i * ca * inner..(i + 1) * ca * inner]);
            out.extend_from_slice(&db[i * cb * inner..(i + 1) * cb * inner]);
        }
        self.push_op(&shape, out, &[a, b], Op::Concat { a, b })
    }
}

pub(crate) fn add_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    a: Var,
    b: Var,
    grads: &mut [Option<Vec<T>>],
) {
    for v in [a, b] {
        if let Some(d) = slot(ctx.nodes, grads, v) {
            for (d, &g) in d.iter_mut().zip(ctx.out) {
                *d += g;
            }
        }
    }
}

pub(crate) fn mul_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    a: Var,
    b: Var,
    grads: &mut [Option<Vec<T>>],
) {
    for (v, other) in [(a, b), (b, a)] {
        let o = ctx.value(other).data();
        if let Some(d) = slot(ctx.nodes, grads, v) {
            for ((d, &g), &y) in d.iter_mut().zip(ctx.out).zip(o) {
                *d += g * y;
            }
        }
    }
}

pub(crate) fn scale_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    input: Var,
    factor: T,
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(d) = slot(ctx.nodes, grads, input) {
        for (d, &g) in d.iter_mut().zip(ctx.out) {
            *d += g * factor;
        }
    }
}

pub(crate) fn sum_backward<T: Real>(ctx: &Ctx<'_, T>, input: Var, grads: &mut [Option<Vec<T>>]) {
    let g = ctx.out[0];
    if let Some(d) = slot(ctx.nodes, grads, input) {
        for d in d.iter_mut() {
            *d += g;
        }
    }
}

pub(crate) fn concat_backward<T: Real>(
    ctx: &Ctx<'_, T>,
    a: Var,
    b: Var,
    grads: &mut [Option<Vec<T>>],
) {
    let sa = ctx.value(a).shape();
    let sb = ctx.value(b).shape();
    let n = sa[0];
    let inner: usize = sa[2..].iter().product();
    let (la, lb) = (sa[1] * inner, sb[1] * inner);
    if let Some(d) = slot(ctx.nodes, grads, a) {
        for i in 0..n {
            for (d, &g) in d[i * la..(i + 1) * la]
                .iter_mut()
                .zip(&ctx.out[i * (la + lb)..])
            {
                *d += g;
            }
        }
    }
    if let Some(d) = slot(ctx.nodes, grads, b) {
        for i in 0..n {
            for (d, &g) in d[i * lb..(i + 1) * lb]
                .iter_mut()
                .zip(&ctx.out[i * (la + lb) + la..])
            {
                *d += g;
            }
        }
    }
}
