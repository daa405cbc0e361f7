use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::config::AdamConfig;
use crate::error::{Error, Result};
use crate::nn::{Gradients, NetworkParameters, PartitionSet};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Descent => -1.0,
            Direction::Ascent => 1.0,
        }
    }
}

/// First and second moment estimates of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// ADAM state for one optimizer, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

fn gradient_for<'a, T: Real>(grads: &'a Gradients<T>, name: &str, len: usize) -> Result<&'a [T]> {
    let g = grads
        .get(name)
        .ok_or_else(|| Error::InvalidArgument(format!("no gradient for `{name}`")))?;
    if g.len() != len {
        return Err(Error::shape(
            "optimizer",
            format!(
                "gradient of `{name}` has {} values, parameter {len}",
                g.len()
            ),
        ));
    }
    Ok(g)
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Apply one bias-corrected ADAM update to a single tensor. `step`
    /// is the 1-based step number.
    pub fn update(
        &mut self,
        name: &str,
        param: &mut [T],
        grad: &[T],
        lr: f64,
        direction: Direction,
        step: u64,
    ) {
        let c = self.config;
        let mo = self.moments.entry(name.into()).or_insert_with(|| Moments {
            m: vec![T::zero(); param.len()],
            v: vec![T::zero(); param.len()],
        });
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - libm::pow(c.beta1, step as f64));
        let bc2 = T::lit(1.0 - libm::pow(c.beta2, step as f64));
        let eps = T::lit(c.eps);
        let scale = T::lit(direction.sign() * lr);
        for (((p, &g), m), v) in param
            .iter_mut()
            .zip(grad)
            .zip(mo.m.iter_mut())
            .zip(mo.v.iter_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p += scale * mhat / (vhat.sqrt() + eps);
        }
    }

    /// One optimizer step over every tensor of `params` in `set`.
    pub fn step(
        &mut self,
        params: &mut NetworkParameters<T>,
        grads: &Gradients<T>,
        set: PartitionSet,
        lr: f64,
        direction: Direction,
    ) -> Result<()> {
        self.step += 1;
        let step = self.step;
        let names: Vec<String> = params.names_in(set).into_iter().map(String::from).collect();
        for name in names {
            let tensor = params.get_mut(&name).expect("listed name");
            let g = gradient_for(grads, &name, tensor.len())?;
            self.update(&name, tensor.data_mut(), g, lr, direction, step);
        }
        Ok(())
    }
}

/// Plain gradient step `p ← p ± lr·g` over every tensor in `set`.
pub fn sgd_step<T: Real>(
    params: &mut NetworkParameters<T>,
    grads: &Gradients<T>,
    set: PartitionSet,
    lr: f64,
    direction: Direction,
) -> Result<()> {
    let scale = T::lit(direction.sign() * lr);
    let names: Vec<String> = params.names_in(set).into_iter().map(String::from).collect();
    for name in names {
        let tensor = params.get_mut(&name).expect("listed name");
        let g = gradient_for(grads, &name, tensor.len())?;
        for (p, &gv) in tensor.data_mut().iter_mut().zip(g) {
            *p += scale * gv;
        }
    }
    Ok(())
}
