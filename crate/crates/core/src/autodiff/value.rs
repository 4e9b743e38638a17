use std::cell::{Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Vector-Jacobian product of one recorded operation.
///
/// Receives the gradient of the loss with respect to the operation's output
/// and the operation's inputs; returns one optional gradient per input, in
/// input order. Inputs that do not require gradients may be answered with
/// `None`.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[Value]) -> Vec<Option<Tensor>>>;

thread_local! {
    static NEXT_ID: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

struct Node {
    id: u64,
    data: RefCell<Tensor>,
    grad: RefCell<Option<Tensor>>,
    requires_grad: bool,
    parents: Vec<Value>,
    backward: Option<BackwardFn>,
    op: &'static str,
}

/// A node of the reverse-mode graph.
///
/// Cloning a `Value` clones the handle, not the array. Graphs are confined to
/// the thread that built them.
#[derive(Clone)]
pub struct Value(Rc<Node>);

impl Value {
    /// A leaf. Trainable parameters are leaves with `requires_grad = true`.
    pub fn new(data: Tensor, requires_grad: bool) -> Self {
        Value(Rc::new(Node {
            id: next_id(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
            op: "leaf",
        }))
    }

    pub fn param(data: Tensor) -> Self {
        Self::new(data, true)
    }

    pub fn constant(data: Tensor) -> Self {
        Self::new(data, false)
    }

    /// Records the result of an operation. Parents and the backward closure
    /// are kept only if some input requires a gradient.
    pub fn from_op(
        op: &'static str,
        data: Tensor,
        parents: Vec<Value>,
        backward: BackwardFn,
    ) -> Self {
        let live = parents.iter().any(Value::requires_grad);
        Value(Rc::new(Node {
            id: next_id(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: live,
            parents: if live { parents } else { Vec::new() },
            backward: if live { Some(backward) } else { None },
            op,
        }))
    }

    #[inline]
    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn op(&self) -> &'static str {
        self.0.op
    }

    pub fn has_parents(&self) -> bool {
        !self.0.parents.is_empty()
    }

    pub fn parents(&self) -> &[Value] {
        &self.0.parents
    }

    /// Same node (graph identity, not numeric equality).
    pub fn ptr_eq(&self, other: &Value) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub fn data(&self) -> Ref<'_, Tensor> {
        self.0.data.borrow()
    }

    /// Mutable access for optimizers and checkpoint restore. Mutating a node
    /// that is part of a live graph invalidates that graph's gradients.
    pub fn data_mut(&self) -> RefMut<'_, Tensor> {
        self.0.data.borrow_mut()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.data.borrow().shape()
    }

    pub fn item(&self) -> f64 {
        self.0.data.borrow().item()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Tensor>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn accumulate(&self, g: Tensor) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => *slot = Some(g),
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Value")
            .field("id", &self.0.id)
            .field("op", &self.0.op)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &*self.0.data.borrow())
            .finish()
    }
}

/// A copy of `v` with no history: `requires_grad = false` and no parents.
pub fn detach(v: &Value) -> Value {
    Value::constant(v.data().clone())
}

/// Reverse-mode sweep from a scalar `loss`.
///
/// Every node reachable from `loss` that requires a gradient has
/// `dloss/dnode` added to its stored gradient. Stored gradients are never
/// cleared here.
pub fn backward(loss: &Value) -> Result<()> {
    let (rows, cols) = loss.shape();
    if (rows, cols) != (1, 1) {
        return Err(Error::NonScalarLoss { rows, cols });
    }
    if !loss.requires_grad() {
        return Ok(());
    }

    // Iterative post-order DFS: parents before children.
    let mut order: Vec<Value> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Value, usize)> = vec![(loss.clone(), 0)];
    seen.insert(loss.id());
    while let Some((node, next)) = stack.pop() {
        if next < node.0.parents.len() {
            let parent = node.0.parents[next].clone();
            stack.push((node, next + 1));
            if parent.requires_grad() && seen.insert(parent.id()) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }

    let mut pending: HashMap<u64, Tensor> = HashMap::new();
    pending.insert(loss.id(), Tensor::scalar(1.0));
    for node in order.iter().rev() {
        let Some(g) = pending.remove(&node.id()) else {
            continue;
        };
        if let Some(bw) = &node.0.backward {
            let parent_grads = bw(&g, &node.0.parents);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len(), "{}", node.op());
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(
                    pg.shape(),
                    parent.shape(),
                    "gradient shape from {} does not match its input",
                    node.op()
                );
                match pending.get_mut(&parent.id()) {
                    Some(acc) => acc.add_assign(&pg),
                    None => {
                        pending.insert(parent.id(), pg);
                    }
                }
            }
        }
        node.accumulate(g);
    }
    Ok(())
}
