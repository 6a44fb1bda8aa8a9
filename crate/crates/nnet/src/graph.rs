//! Dynamic computation tape for reverse-mode autodiff.
//!
//! Every forward op pushes a node holding its output value plus a one-shot
//! backward closure. `Graph::backward` walks the tape in reverse, handing each
//! node its accumulated output gradient. Gradients are only materialised for
//! nodes that (transitively) require them, so frozen networks cost nothing on
//! the way back.

use ndarray::{ArrayD, IxDyn};
use std::collections::HashMap;
use std::rc::Rc;

/// Index of a node on the tape. Only meaningful for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Backward closure: receives the gradient of the loss w.r.t. this node's
/// output and scatters gradients to the node's inputs via the [`GradStore`].
pub type BackwardFn = Box<dyn FnOnce(&ArrayD<f32>, &mut GradStore)>;

struct Node {
    value: Rc<ArrayD<f32>>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// A single-use forward tape. Build it, call [`Graph::backward`] once, drop it.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Parameter storage pointer -> leaf id, so the same parameter reused in
    /// one forward pass maps to a single node (gradients accumulate there)
    /// and trainers can find leaf ids again after the pass.
    param_leaves: HashMap<usize, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf that shares storage with the caller (e.g. a parameter).
    pub fn leaf(&mut self, value: Rc<ArrayD<f32>>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            requires_grad,
            backward: None,
        });
        id
    }

    /// Insert a constant leaf (no gradient ever flows into it).
    pub fn constant(&mut self, value: ArrayD<f32>) -> NodeId {
        self.leaf(Rc::new(value), false)
    }

    /// Insert (or look up) the leaf for a parameter. Repeated calls with the
    /// same parameter return the same node, so shared weights accumulate
    /// gradients correctly and [`Graph::leaf_id`] works after the forward pass.
    pub fn param_leaf(&mut self, p: &Param, trainable: bool) -> NodeId {
        let key = Rc::as_ptr(&p.value) as usize;
        if let Some(&id) = self.param_leaves.get(&key) {
            assert_eq!(
                self.nodes[id.0].requires_grad, trainable,
                "parameter reused within one graph with a different trainable flag"
            );
            return id;
        }
        let id = self.leaf(Rc::clone(&p.value), trainable);
        self.param_leaves.insert(key, id);
        id
    }

    /// Leaf id a parameter was registered under in this graph, if any.
    pub fn leaf_id(&self, p: &Param) -> Option<NodeId> {
        self.param_leaves
            .get(&(Rc::as_ptr(&p.value) as usize))
            .copied()
    }

    /// Push an op output. `requires_grad` should be true iff any input
    /// requires a gradient; `backward` may be `None` for such detached nodes.
    pub fn push(
        &mut self,
        value: ArrayD<f32>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> NodeId {
        self.push_shared(Rc::new(value), requires_grad, backward)
    }

    /// Like [`Graph::push`] but for ops whose backward closure captures the
    /// output value itself (activations): the `Rc` avoids a copy.
    pub fn push_shared(
        &mut self,
        value: Rc<ArrayD<f32>>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            requires_grad,
            backward,
        });
        id
    }

    /// Borrow a node's value.
    pub fn value(&self, id: NodeId) -> &ArrayD<f32> {
        &self.nodes[id.0].value
    }

    /// Clone the value's `Rc` (cheap; used by backward closures and callers
    /// that outlive the graph).
    pub fn rc_value(&self, id: NodeId) -> Rc<ArrayD<f32>> {
        Rc::clone(&self.nodes[id.0].value)
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Run reverse-mode accumulation from `root` (must be a scalar node) and
    /// consume the tape. Leaf gradients are left in the returned store.
    pub fn backward(mut self, root: NodeId) -> GradStore {
        assert_eq!(
            self.nodes[root.0].value.len(),
            1,
            "backward root must be a scalar, got shape {:?}",
            self.nodes[root.0].value.shape()
        );
        let wants: Vec<bool> = self.nodes.iter().map(|n| n.requires_grad).collect();
        let mut store = GradStore {
            grads: (0..self.nodes.len()).map(|_| None).collect(),
            wants,
        };
        let seed = ArrayD::from_elem(IxDyn(self.nodes[root.0].value.shape()), 1.0f32);
        store.accumulate(root, seed);
        for idx in (0..self.nodes.len()).rev() {
            if !store.wants[idx] {
                continue;
            }
            let Some(back) = self.nodes[idx].backward.take() else {
                continue; // leaf: gradient stays in the store
            };
            // Nodes that never received a gradient are off the path to root.
            let Some(gy) = store.grads[idx].take() else {
                continue;
            };
            back(&gy, &mut store);
        }
        store
    }
}

/// Per-node gradient accumulator produced by [`Graph::backward`].
pub struct GradStore {
    grads: Vec<Option<ArrayD<f32>>>,
    wants: Vec<bool>,
}

impl GradStore {
    /// Whether gradients should be produced for `id` at all. Backward
    /// closures consult this to skip dead work (frozen weights, constants).
    pub fn needs(&self, id: NodeId) -> bool {
        self.wants[id.0]
    }

    /// Add `g` into the slot for `id` (no-op when the node is frozen).
    pub fn accumulate(&mut self, id: NodeId, g: ArrayD<f32>) {
        if !self.wants[id.0] {
            return;
        }
        match &mut self.grads[id.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Remove and return the accumulated gradient for `id`, if any.
    pub fn take(&mut self, id: NodeId) -> Option<ArrayD<f32>> {
        self.grads[id.0].take()
    }
}

/// A trainable tensor: shared storage plus an optional accumulated gradient.
///
/// Forward passes hand `Rc` clones of `value` to the graph; after backward the
/// trainer moves gradients from the [`GradStore`] into `grad` and lets the
/// optimizer consume them. `Rc::make_mut` keeps updates copy-free once the
/// graph (the only other holder) has been dropped.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Rc<ArrayD<f32>>,
    pub grad: Option<ArrayD<f32>>,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        Self {
            value: Rc::new(value),
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.len() == 0
    }

    /// Mutable access for the optimizer. Panics if a graph still holds the
    /// storage — steps must happen after backward consumed the tape.
    pub fn value_mut(&mut self) -> &mut ArrayD<f32> {
        Rc::make_mut(&mut self.value)
    }
}
