use alloc::vec;
use alloc::vec::Vec;

use super::conv::{self, Conv2dNode};
use super::norm::{self, BatchNormNode};
use super::{activation, dense, elementwise, loss, pool};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d(Conv2dNode<T>),
    BatchNorm(BatchNormNode<T>),
    Relu { input: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    Upsample { input: Var },
    GlobalAvgPool { input: Var },
    Dense { input: Var, weight: Var, bias: Var },
    Softmax { input: Var },
    CrossEntropy { probs: Var, target: Vec<T> },
    SoftDice { probs: Var, target: Vec<T> },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: T },
    Sum { input: Var },
}

pub(crate) struct Node<T> {
    pub tensor: Tensor<T>,
    pub op: Op<T>,
}

pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input or parameter. Gradients are tracked when the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.clear_grad();
        self.push(tensor, Op::Leaf)
    }

    /// A copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone().with_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].tensor.data()
    }

    /// Gradient of the last backward pass; `None` for values that do not
    /// require gradients.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].tensor.grad()
    }

    pub(crate) fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    pub(crate) fn push(&mut self, tensor: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an operator output; it requires gradients iff any input does.
    pub(crate) fn push_op(
        &mut self,
        shape: &[usize],
        data: Vec<T>,
        inputs: &[Var],
        op: Op<T>,
    ) -> Result<Var> {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        let t = Tensor::new(shape, data)?.with_requires_grad(rg);
        Ok(self.push(t, op))
    }

    /// Populate `grad` on every `requires_grad` tensor recorded up to
    /// `loss` with d(loss)/d(tensor). Tensors the loss does not reach get a
    /// zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss {
                shape: shape.to_vec(),
            });
        }
        let end = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..end).map(|_| None).collect();
        if self.requires_grad(loss) {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..end).rev() {
            let Some(out) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let node = &nodes[i];
            let ctx = Ctx {
                nodes,
                out: &out,
                out_value: node.tensor.data(),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d(c) => conv::backward(&ctx, c, &mut grads),
                Op::BatchNorm(b) => norm::backward(&ctx, b, &mut grads),
                Op::Relu { input } => activation::relu_backward(&ctx, *input, &mut grads),
                Op::MaxPool { input, argmax } => {
                    pool::maxpool_backward(&ctx, *input, argmax, &mut grads)
                }
                Op::Upsample { input } => pool::upsample_backward(&ctx, *input, &mut grads),
                Op::GlobalAvgPool { input } => pool::gap_backward(&ctx, *input, &mut grads),
                Op::Dense {
                    input,
                    weight,
                    bias,
                } => dense::backward(&ctx, *input, *weight, *bias, &mut grads),
                Op::Softmax { input } => activation::softmax_backward(&ctx, *input, &mut grads),
                Op::CrossEntropy { probs, target } => {
                    loss::cross_entropy_backward(&ctx, *probs, target, &mut grads)
                }
                Op::SoftDice { probs, target } => {
                    loss::soft_dice_backward(&ctx, *probs, target, &mut grads)
                }
                Op::Concat { a, b } => elementwise::concat_backward(&ctx, *a, *b, &mut grads),
                Op::Add { a, b } => elementwise::add_backward(&ctx, *a, *b, &mut grads),
                Op::Mul { a, b } => elementwise::mul_backward(&ctx, *a, *b, &mut grads),
                Op::Scale { input, factor } => {
                    elementwise::scale_backward(&ctx, *input, *factor, &mut grads)
                }
                Op::Sum { input } => elementwise::sum_backward(&ctx, *input, &mut grads),
            }
            grads[i] = Some(out);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !node.tensor.requires_grad() {
                continue;
            }
            let g = match grads.get_mut(i).and_then(Option::take) {
                Some(g) => g,
                None => vec![T::zero(); node.tensor.len()],
            };
            node.tensor.set_grad(g)?;
        }
        Ok(())
    }
}

/// Read-only view handed to each operator's backward rule.
pub(crate) struct Ctx<'a, T> {
    pub nodes: &'a [Node<T>],
    /// Gradient flowing into this node's output.
    pub out: &'a [T],
    /// This node's forward output.
    pub out_value: &'a [T],
}

impl<T: Real> Ctx<'_, T> {
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }
}

/// Accumulation buffer for `v`, or `None` when `v` needs no gradient.
pub(crate) fn slot<'g, T: Real>(
    nodes: &[Node<T>],
    grads: &'g mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'g mut Vec<T>> {
    let t = &nodes[v.0].tensor;
    if !t.requires_grad() {
        return None;
    }
    let n = t.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}
