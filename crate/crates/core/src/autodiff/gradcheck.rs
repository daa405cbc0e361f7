//! Central finite-difference gradient check.
//!
//! The numeric side only ever runs forward passes, so it is independent of
//! every backward rule it validates.

use alloc::vec::Vec;

use super::tape::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Relative error `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` for
/// each input of `build`, which must return a scalar loss. Errors of inputs
/// whose two gradients are both below `1e-12` in norm are reported as 0.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).expect("leaf requires grad").to_vec())
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        g.value(loss).item()
    };

    let mut errors = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(a.len());
        for j in 0..a.len() {
            let x0 = work[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x0;
            numeric.push((up - down) / (2.0 * h));
        }
        let diff = libm::sqrt(
            a.iter()
                .zip(&numeric)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>(),
        );
        let na = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>());
        let nn = libm::sqrt(numeric.iter().map(|x| x * x).sum::<f64>());
        let scale = na.max(nn);
        errors.push(if scale < 1e-12 { 0.0 } else { diff / scale });
    }
    Ok(errors)
}
