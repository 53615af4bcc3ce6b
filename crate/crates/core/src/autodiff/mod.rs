//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation as a node holding its output value and
//! the [`Var`]s of its operands. Nodes are append-only and never mutated, so
//! node order is execution order and [`Tape::backward`] replays it in exact
//! reverse. Leaf gradients accumulate across backward calls until
//! [`Tape::zero_grads`].
//!
//! ```
//! use mentor_core::autodiff::Tape;
//! use mentor_core::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
//! let sq = tape.square(x);
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

pub mod gradcheck;
pub mod kernels;
mod ops;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use kernels::ConvGeometry;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    MaxPool2x {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2x(Var),
    ConcatChannels(Var, Var),
    GlobalAvgPool(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    ClassMap {
        features: Var,
        weight: Var,
        classes: Vec<usize>,
    },
    MinMaxNormalize {
        x: Var,
        eps: f64,
        argmin: Vec<usize>,
        argmax: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2x { .. } => "maxpool2x",
            Op::Upsample2x(_) => "upsample_nearest2x",
            Op::ConcatChannels(..) => "concat_channels",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::ClassMap { .. } => "class_map",
            Op::MinMaxNormalize { .. } => "minmax_normalize",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<E: Element> {
    value: Tensor<E>,
    op: Op,
    requires_grad: bool,
}

/// Record of executed differentiable operations.
#[derive(Debug, Clone)]
pub struct Tape<E: Element = f32> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input tensor. Gradients are only accumulated for leaves
    /// with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Moves the accumulated gradient of a leaf out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<E>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor<E>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push_op(&mut self, value: Tensor<E>, op: Op, operands: &[Var]) -> Var {
        let rg = self.any_grad(operands);
        self.push(value, op, rg)
    }

    /// Back-propagates from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_trace(loss).map(|_| ())
    }

    /// Like [`Tape::backward`], returning the non-leaf nodes in the order
    /// their backward rules ran.
    pub fn backward_trace(&mut self, loss: Var) -> Result<Vec<Var>> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss must be a scalar, got shape {:?}",
                    loss_value.shape()
                ),
            ));
        }
        let mut visited = Vec::new();
        if !self.nodes[loss.0].requires_grad {
            return Ok(visited);
        }
        let mut pending: Vec<Option<Tensor<E>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), E::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                accumulate(&mut self.grads[i], g);
                continue;
            }
            visited.push(Var(i));
            for (operand, grad) in ops::backward_rule(&self.nodes, i, &g) {
                if self.nodes[operand.0].requires_grad {
                    accumulate(&mut pending[operand.0], grad);
                }
            }
        }
        Ok(visited)
    }
}

fn accumulate<E: Element>(slot: &mut Option<Tensor<E>>, g: Tensor<E>) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}
