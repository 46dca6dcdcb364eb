//! Define-by-run tape. Every op appends a node whose backward closure emits
//! gradient contributions to its parents; [`Graph::backward`] walks the tape
//! in reverse. Node order is the topological order, and all accumulation is
//! sequential, so gradients are bit-reproducible run to run.

use super::scalar::Scalar;
use super::tensor::Tensor;
use std::cell::RefCell;
use std::rc::Rc;

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &mut dyn FnMut(usize, Tensor<T>))>;

struct Node<T> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

/// Computation tape handle. Cheap to clone.
pub struct Graph<T: Scalar> {
    inner: Rc<RefCell<Inner<T>>>,
}

impl<T: Scalar> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Self { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub const NO_NODE: usize = usize::MAX;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { inner: Rc::new(RefCell::new(Inner { nodes: Vec::new(), recording: true })) }
    }

    /// A graph that skips tape recording; forward values only.
    pub fn inference() -> Self {
        Self { inner: Rc::new(RefCell::new(Inner { nodes: Vec::new(), recording: false })) }
    }

    pub fn is_recording(&self) -> bool {
        self.inner.borrow().recording
    }

    /// Leaf variable (an input or a parameter).
    pub fn var(&self, value: Tensor<T>) -> Var<T> {
        let id = self.push(Vec::new(), None);
        Var { graph: self.clone(), id, value }
    }

    /// Leaf that carries a constant; identical to `var` on the tape, named
    /// for intent at call sites.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.var(value)
    }

    pub(super) fn push(&self, parents: Vec<usize>, backward: Option<BackwardFn<T>>) -> usize {
        let mut inner = self.inner.borrow_mut();
        if !inner.recording {
            return NO_NODE;
        }
        inner.nodes.push(Node { parents, backward });
        inner.nodes.len() - 1
    }

    pub(super) fn make_var(&self, id: usize, value: Tensor<T>) -> Var<T> {
        Var { graph: self.clone(), id, value }
    }

    /// Reverse-mode sweep from `root` (typically the loss). Returns per-node
    /// gradients indexed by node id; leaves read theirs via [`Var::id`].
    pub fn backward(&self, root: &Var<T>) -> Gradients<T> {
        let inner = self.inner.borrow();
        assert!(inner.recording, "backward on an inference graph");
        assert!(root.id != NO_NODE, "backward root is not on this tape");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; inner.nodes.len()];
        grads[root.id] = Some(Tensor::full(root.value.dims(), T::ONE));
        for id in (0..=root.id).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &inner.nodes[id];
            if let Some(backward) = &node.backward {
                let parents = &node.parents;
                let mut emit = |slot: usize, contribution: Tensor<T>| {
                    let parent = parents[slot];
                    match &mut grads[parent] {
                        Some(acc) => acc.accumulate(&contribution),
                        entry @ None => *entry = Some(contribution),
                    }
                };
                backward(&grad, &mut emit);
            }
            grads[id] = Some(grad);
        }
        Gradients { grads }
    }
}

/// Gradients from one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

/// A value on (or off, in inference mode) the tape.
#[derive(Clone)]
pub struct Var<T: Scalar> {
    pub(super) graph: Graph<T>,
    pub(super) id: usize,
    pub(super) value: Tensor<T>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }
}
