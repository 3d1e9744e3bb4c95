//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every forward operation allocates a new [`Value`] node that remembers its
//! parents and a backward rule. Calling [`backward`] on a scalar root walks
//! the graph in reverse topological order and *adds* the root's partial
//! derivatives into each reachable node's gradient slot. Gradients are only
//! cleared explicitly (see [`Value::zero_grad`] and [`optim::optimizer_step`]),
//! so two backward passes over different losses accumulate into the same
//! parameters.
//!
//! Vectors are represented as `1 × d` rows and scalars as `1 × 1`.

pub mod gradcheck;
pub mod ops;
pub mod optim;

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use ops::Axis;
pub use optim::{optimizer_step, LearningRates, ParamGroup, Parameter};

pub type Tensor = Array2<f64>;

/// Computes the gradient contribution for each parent given the upstream
/// gradient of the node. `None` means "no contribution".
pub type BackwardFn = Box<dyn Fn(&Tensor, &[Value], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    data: RefCell<Tensor>,
    grad: RefCell<Tensor>,
    parents: Vec<Value>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// A node in the computation graph.
///
/// Cloning a `Value` is cheap and yields another handle to the same node.
#[derive(Clone)]
pub struct Value(Rc<Node>);

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Value")
            .field("shape", &self.shape())
            .field("data", &*self.data())
            .finish()
    }
}

impl Value {
    /// A leaf that does not take part in differentiation.
    pub fn constant(data: Tensor) -> Self {
        Self::leaf(data, false)
    }

    /// A trainable leaf.
    pub fn variable(data: Tensor) -> Self {
        Self::leaf(data, true)
    }

    pub fn scalar(x: f64) -> Self {
        Self::constant(Array2::from_elem((1, 1), x))
    }

    pub fn row(values: &[f64]) -> Self {
        Self::constant(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    fn leaf(data: Tensor, requires_grad: bool) -> Self {
        let grad = Array2::zeros(data.raw_dim());
        Value(Rc::new(Node {
            data: RefCell::new(data),
            grad: RefCell::new(grad),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        }))
    }

    /// Builds a node produced by an operation. The backward rule receives the
    /// upstream gradient, the parents and the node's own output.
    pub fn from_op(data: Tensor, parents: Vec<Value>, backward: BackwardFn) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad = Array2::zeros(data.raw_dim());
        Value(Rc::new(Node {
            data: RefCell::new(data),
            grad: RefCell::new(grad),
            parents: if requires_grad { parents } else { Vec::new() },
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
        }))
    }

    pub fn data(&self) -> Ref<'_, Tensor> {
        self.0.data.borrow()
    }

    pub fn grad(&self) -> Ref<'_, Tensor> {
        self.0.grad.borrow()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.data.borrow().dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The single element of a `1 × 1` value.
    pub fn item(&self) -> f64 {
        let d = self.data();
        debug_assert_eq!(d.len(), 1);
        d[[0, 0]]
    }

    /// A constant copy that cuts the graph.
    pub fn detach(&self) -> Value {
        Value::constant(self.data().clone())
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().fill(0.0);
    }

    /// Overwrites leaf data in place. Used by optimizers and checkpoint loading.
    pub fn set_data(&self, data: Tensor) -> Result<()> {
        let mut slot = self.0.data.borrow_mut();
        if slot.dim() != data.dim() {
            return Err(Error::shape("set_data", slot.dim(), data.dim()));
        }
        *slot = data;
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut Tensor, &Tensor)) {
        let grad = self.0.grad.borrow();
        let mut data = self.0.data.borrow_mut();
        f(&mut data, &grad);
    }

    pub(crate) fn add_to_grad(&self, delta: &Tensor) {
        let mut g = self.0.grad.borrow_mut();
        *g += delta;
    }

    fn ptr(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    pub fn same_node(&self, other: &Value) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

/// Nodes reachable from `root` that require gradients, parents before children.
fn topological_order(root: &Value) -> Vec<Value> {
    let mut order = Vec::new();
    let mut visited: HashSet<*const Node> = HashSet::new();
    // Iterative post-order DFS; parents are visited in declaration order.
    let mut stack: Vec<(Value, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.ptr());
    while let Some((node, next_parent)) = stack.pop() {
        if next_parent < node.0.parents.len() {
            let parent = node.0.parents[next_parent].clone();
            stack.push((node, next_parent + 1));
            if parent.requires_grad() && visited.insert(parent.ptr()) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

/// Accumulates d(root)/d(node) into the gradient slot of every node reachable
/// from the scalar `root`.
pub fn backward(root: &Value) -> Result<()> {
    let shape = root.shape();
    if shape != (1, 1) {
        return Err(Error::shape("backward (root must be scalar)", shape, (1, 1)));
    }
    if !root.requires_grad() {
        return Ok(());
    }
    let order = topological_order(root);
    // Per-call gradients, merged into the persistent slots at the end so that
    // repeated calls accumulate exactly.
    let mut pending: HashMap<*const Node, Tensor> = HashMap::new();
    pending.insert(root.ptr(), Array2::ones((1, 1)));
    for node in order.iter().rev() {
        let Some(upstream) = pending.get(&node.ptr()).cloned() else {
            continue;
        };
        if let Some(rule) = &node.0.backward {
            let contributions = {
                let out = node.data();
                rule(&upstream, &node.0.parents, &out)
            };
            for (parent, contribution) in node.0.parents.iter().zip(contributions) {
                let Some(contribution) = contribution else {
                    continue;
                };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(contribution.dim(), parent.shape());
                pending
                    .entry(parent.ptr())
                    .and_modify(|g| *g += &contribution)
                    .or_insert(contribution);
            }
        }
    }
    for node in &order {
        if let Some(g) = pending.get(&node.ptr()) {
            node.add_to_grad(g);
        }
    }
    Ok(())
}
