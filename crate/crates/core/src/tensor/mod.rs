//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! Operations on tensors that live on a [`Tape`] are recorded; operations on
//! detached tensors are evaluated eagerly with nothing recorded. Gradients
//! may be taken with `create_graph`, in which case the backward pass is
//! itself recorded and can be differentiated again (double backprop).

mod backward;
mod check;
pub(crate) mod kernels;
mod op;
mod ops;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use backward::gradient;
pub use check::{finite_diff_check, max_relative_error};
pub use op::{Op, LEAKY_SLOPE};
pub use ops::*;

pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
    pub shape: Vec<usize>,
    pub value: Rc<Vec<f64>>,
    pub requires_grad: bool,
}

/// Counts of backward passes run against a tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TapeStats {
    pub backward_passes: usize,
    /// Passes run with `create_graph`, i.e. the first half of a
    /// gradient-of-gradient computation.
    pub create_graph_passes: usize,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    stats: TapeStats,
}

/// Append-only record of operations. Cloning shares the same record.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> TapeStats {
        self.inner.borrow().stats
    }

    pub(crate) fn bump_stats(&self, create_graph: bool) {
        let mut inner = self.inner.borrow_mut();
        inner.stats.backward_passes += 1;
        if create_graph {
            inner.stats.create_graph_passes += 1;
        }
    }

    pub fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Places `value` on the tape as a leaf.
    pub fn leaf(&self, value: &Tensor, requires_grad: bool) -> Result<Tensor> {
        value.check_finite("leaf")?;
        let id = self.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            shape: value.shape.clone(),
            value: value.data.clone(),
            requires_grad,
        });
        Ok(self.tensor(id))
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn var(&self, value: &Tensor) -> Result<Tensor> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: &Tensor) -> Result<Tensor> {
        self.leaf(value, false)
    }

    pub(crate) fn push(&self, node: Node) -> usize {
        let mut inner = self.inner.borrow_mut();
        debug_assert!(node.inputs.iter().all(|&i| i < inner.nodes.len()));
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }

    pub(crate) fn tensor(&self, id: usize) -> Tensor {
        let inner = self.inner.borrow();
        let node = &inner.nodes[id];
        Tensor {
            shape: node.shape.clone(),
            data: node.value.clone(),
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        }
    }

    pub(crate) fn with_nodes<R>(&self, f: impl FnOnce(&[Node]) -> R) -> R {
        f(&self.inner.borrow().nodes)
    }

    /// Re-evaluates every recorded operation from its inputs' saved values
    /// and checks the result against the saved value bit for bit.
    pub fn replay_check(&self) -> Result<()> {
        self.with_nodes(|nodes| {
            for (id, node) in nodes.iter().enumerate() {
                if node.inputs.iter().any(|&i| i >= id) {
                    return Err(Error::Gradient(format!("node {id} references a later node")));
                }
                if node.op == Op::Leaf {
                    continue;
                }
                let args: Vec<op::Arg> = node
                    .inputs
                    .iter()
                    .map(|&i| (nodes[i].shape.as_slice(), nodes[i].value.as_slice()))
                    .collect();
                let (shape, value) = op::forward(&node.op, &args)?;
                let same = shape == node.shape
                    && value.len() == node.value.len()
                    && value.iter().zip(node.value.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    return Err(Error::Gradient(format!(
                        "replay of node {id} ({}) differs from its saved value",
                        node.op.name()
                    )));
                }
            }
            Ok(())
        })
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: Tape,
    pub id: usize,
}

/// A dense row-major f64 tensor, optionally bound to a tape node.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if op::numel(&shape) != data.len() {
            return Err(Error::Shape {
                kind: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: Rc::new(vec![v]),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(vec![0.0; op::numel(shape)]),
            node: None,
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(vec![v; op::numel(shape)]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Same value, no tape binding.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    pub fn is_on_tape(&self) -> bool {
        self.node.is_some()
    }

    pub fn requires_grad(&self) -> bool {
        match &self.node {
            Some(n) => n.tape.with_nodes(|nodes| nodes[n.id].requires_grad),
            None => false,
        }
    }

    pub(crate) fn check_finite(&self, kind: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { kind })
        }
    }

    pub(crate) fn node(&self) -> Option<&NodeRef> {
        self.node.as_ref()
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Rc<Vec<f64>>, node: Option<NodeRef>) -> Self {
        Tensor { shape, data, node }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape);
        if self.data.len() <= 16 {
            s.field("data", &self.data);
        }
        s.field("node", &self.node_id()).finish()
    }
}
