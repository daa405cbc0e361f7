//! Reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operator appends a node holding its output
//! tensor plus whatever the backward pass needs, and [`Graph::backward`]
//! walks the tape in exact reverse order. Gradients accumulate additively,
//! so a value consumed by several operators receives the sum of their
//! contributions.
//!
//! A graph is built for a single forward/backward pass and is not shared
//! between threads.

mod activation;
mod conv;
mod dense;
mod elementwise;
pub mod gradcheck;
mod loss;
mod norm;
mod pool;
mod tape;

pub use conv::Padding;
pub use norm::{BatchNormMode, BatchNormStats};
pub use tape::{Graph, Var};

#[cfg(test)]
mod tests;

/// Probability floor applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;

/// Smoothing term of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-6;
