use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{ParamId, ParamSet};
use super::shape::Shape;
use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tensor(pub(crate) usize);

impl Tensor {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-rule corruption, used as a negative control for the
/// gradient checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negate the GELU derivative.
    GeluSign,
}

/// Per-axis bilinear taps for corner-aligned resizing.
#[derive(Clone, Debug)]
pub(crate) struct Taps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, T),
    Sum(Tensor),
    Reshape(Tensor),
    MatMul {
        a: Tensor,
        b: Tensor,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    AddRowBias(Tensor, Tensor),
    LayerNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Tensor),
    Softmax(Tensor),
    Gather(Tensor, Arc<[usize]>),
    Warp {
        src: Tensor,
        disp: Tensor,
        channels: usize,
        h: usize,
        w: usize,
    },
    Resize {
        x: Tensor,
        channels: usize,
        rows: Taps,
        cols: Taps,
        in_w: usize,
    },
}

pub(crate) struct Node<T> {
    pub shape: Shape,
    pub value: Vec<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
    /// Persistent gradient accumulator; only allocated for leaves.
    pub grad: Option<Vec<T>>,
}

/// Records one forward pass for reverse-mode differentiation.
pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    param_nodes: BTreeMap<ParamId, Tensor>,
    pub(crate) fault: Option<Fault>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
            fault: None,
        }
    }

    pub fn with_fault(fault: Option<Fault>) -> Self {
        Tape { fault, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, shape: Shape, value: Vec<T>, op: Op<T>) -> Tensor {
        debug_assert_eq!(shape.numel(), value.len());
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => op_inputs(&op).iter().any(|t| self.nodes[t.0].requires_grad),
        };
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Tensor(id)
    }

    /// Differentiable leaf initialised with `data`.
    pub fn leaf(&mut self, shape: impl Into<Shape>, data: Vec<T>) -> Result<Tensor> {
        let shape = shape.into();
        check_len(&shape, &data, "leaf")?;
        let t = self.push(shape, data, Op::Leaf);
        let node = &mut self.nodes[t.0];
        node.requires_grad = true;
        node.grad = Some(vec![T::zero(); node.value.len()]);
        Ok(t)
    }

    /// Non-differentiable input (images, masks, index-free constants).
    pub fn constant(&mut self, shape: impl Into<Shape>, data: Vec<T>) -> Result<Tensor> {
        let shape = shape.into();
        check_len(&shape, &data, "constant")?;
        Ok(self.push(shape, data, Op::Leaf))
    }

    /// Node for a parameter; the same node is returned on every call so a
    /// parameter used in several places accumulates all contributions.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Tensor {
        if let Some(&t) = self.param_nodes.get(&id) {
            return t;
        }
        let p = params.get(id);
        let t = self.push(p.shape.clone(), p.data.clone(), Op::Param(id));
        self.param_nodes.insert(id, t);
        t
    }

    /// Number of distinct parameter leaves created so far.
    pub fn param_leaf_count(&self) -> usize {
        self.param_nodes.len()
    }

    /// Parameter ids referenced by this tape, in id order.
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.param_nodes.keys().copied()
    }

    pub fn value(&self, t: Tensor) -> &[T] {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> &Shape {
        &self.nodes[t.0].shape
    }

    pub fn scalar(&self, t: Tensor) -> T {
        self.nodes[t.0].value[0]
    }

    /// Accumulated gradient of a leaf or parameter node.
    pub fn grad(&self, t: Tensor) -> Option<&[T]> {
        self.nodes[t.0].grad.as_deref()
    }

    /// Parameter node of `id`, if this tape used it.
    pub fn param_node(&self, id: ParamId) -> Option<Tensor> {
        self.param_nodes.get(&id).copied()
    }

    /// Back-propagate from a scalar `root`. Leaf gradients accumulate across
    /// repeated calls; intermediate gradients are per call.
    pub fn backward(&mut self, root: Tensor) -> Result<()> {
        let root_node = &self.nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {}",
                root_node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![T::one()]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf | Op::Param(_)) {
                let acc = self.nodes[id].grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += *v;
                }
            } else {
                super::ops::backprop(&self.nodes, id, &g, &mut grads, self.fault);
            }
        }
        Ok(())
    }

    /// The parameter behind `t`, if `t` is a parameter node.
    pub fn param_of(&self, t: Tensor) -> Option<ParamId> {
        match self.nodes[t.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Gradients of every parameter node, keyed by parameter id.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[T])> + '_ {
        self.param_nodes
            .iter()
            .filter_map(|(&id, &t)| self.nodes[t.0].grad.as_deref().map(|g| (id, g)))
    }
}

pub(crate) fn op_inputs<T>(op: &Op<T>) -> Vec<Tensor> {
    match op {
        Op::Leaf | Op::Param(_) => Vec::new(),
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRowBias(a, b) => vec![*a, *b],
        Op::MatMul { a, b, .. } => vec![*a, *b],
        Op::Scale(x, _) | Op::Sum(x) | Op::Reshape(x) | Op::Gelu(x) | Op::Softmax(x) | Op::Gather(x, _) => vec![*x],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Warp { src, disp, .. } => vec![*src, *disp],
        Op::Resize { x, .. } => vec![*x],
    }
}

fn check_len<T>(shape: &Shape, data: &[T], op: &'static str) -> Result<()> {
    if shape.numel() != data.len() {
        return Err(Error::Dimension {
            op,
            detail: format!("shape {} needs {} values, got {}", shape, shape.numel(), data.len()),
        });
    }
    Ok(())
}
