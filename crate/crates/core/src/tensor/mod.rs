//! Minimal dense f32 tensor engine with reverse-mode automatic
//! differentiation.
//!
//! Values are immutable after construction; the gradient slot is the only
//! mutable state. Every differentiable operation records its parents and a
//! backward closure; [`Tensor::backward`] walks the recorded graph once in
//! reverse topological order and accumulates gradients into every reachable
//! tensor that has `requires_grad` set. Provenance records are freed as the
//! walk consumes them, so a graph is backpropagated at most once; repeated
//! backward passes over fresh graphs accumulate into the same leaf grads.
//!
//! There is no implicit broadcasting: shapes must match exactly except for
//! the dedicated bias-add ops. All kernels are single-threaded and
//! deterministic; callers parallelize across independent graphs.

mod nn;
mod ops;

pub mod check;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub type TensorResult<T> = Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("matmul dimension mismatch: [{m}, {k}] x [{k2}, {n}]")]
    MatmulMismatch { m: usize, k: usize, k2: usize, n: usize },
    #[error(
        "conv2d output size is not integral: input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
    )]
    ConvSize { h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize },
    #[error("pool size {size} does not divide spatial dims {h}x{w}")]
    PoolSize { h: usize, w: usize, size: usize },
    #[error("segment id {id} out of range for {n_segments} segments")]
    SegmentOutOfRange { id: usize, n_segments: usize },
    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("axis {axis} invalid or empty for shape {shape:?}")]
    BadAxis { axis: usize, shape: Vec<usize> },
    #[error("cannot reshape {from:?} into {to:?}")]
    BadReshape { from: Vec<usize>, to: Vec<usize> },
    #[error("value count {len} does not match shape {shape:?}")]
    BadLength { len: usize, shape: Vec<usize> },
    #[error("rank {rank} not supported by {op}")]
    BadRank { op: &'static str, rank: usize },
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward closure: receives the node's gradient and its parents, and
/// accumulates into the parents' gradient slots.
type BackwardFn = Box<dyn Fn(&[f32], &[Tensor])>;

struct OpRecord {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: Vec<f32>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
    op: RefCell<Option<OpRecord>>,
}

/// Shaped f32 array with an optional gradient slot and recorded provenance.
/// Cloning is cheap (shared reference).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn from_parts(
        shape: Vec<usize>,
        values: Vec<f32>,
        requires_grad: bool,
        op: Option<OpRecord>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values,
                requires_grad,
                grad: RefCell::new(None),
                op: RefCell::new(op),
            }),
        }
    }

    /// Leaf tensor. `requires_grad` marks it as a differentiation target.
    pub fn leaf(shape: &[usize], values: Vec<f32>, requires_grad: bool) -> TensorResult<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(TensorError::BadLength { len: values.len(), shape: shape.to_vec() });
        }
        Ok(Self::from_parts(shape.to_vec(), values, requires_grad, None))
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_vec(shape: &[usize], values: Vec<f32>) -> TensorResult<Self> {
        Self::leaf(shape, values, false)
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], values: Vec<f32>) -> TensorResult<Self> {
        Self::leaf(shape, values, true)
    }

    pub fn scalar(v: f32) -> Self {
        Self::from_parts(vec![1], vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; shape.iter().product()], false, None)
    }

    pub fn full(shape: &[usize], v: f32) -> Self {
        Self::from_parts(shape.to_vec(), vec![v; shape.iter().product()], false, None)
    }

    /// Internal constructor for op outputs. The record is attached only when
    /// some parent is tracked, so untracked subgraphs cost nothing.
    pub(crate) fn from_op<F>(
        shape: Vec<usize>,
        values: Vec<f32>,
        parents: Vec<Tensor>,
        backward: F,
    ) -> Self
    where
        F: Fn(&[f32], &[Tensor]) + 'static,
    {
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        let op = requires_grad
            .then(|| OpRecord { parents, backward: Box::new(backward) });
        Self::from_parts(shape, values, requires_grad, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.inner.values
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.inner.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Copy of the values with no provenance and no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.inner.shape.clone(), self.inner.values.clone(), false, None)
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub(crate) fn accumulate_grad(&self, g: &[f32]) {
        if !self.inner.requires_grad {
            return;
        }
        debug_assert_eq!(g.len(), self.len());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (a, b) in existing.iter_mut().zip(g) {
                    *a += *b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar root. Gradients accumulate into the
    /// `grad` slot of every reachable tracked tensor; call sites that reuse
    /// leaves across graphs are responsible for clearing between steps.
    /// Provenance records are consumed (freed) by the sweep.
    pub fn backward(&self) -> TensorResult<()> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarRoot { shape: self.inner.shape.clone() });
        }
        if !self.inner.requires_grad {
            return Ok(());
        }
        let order = topo_order(self);
        self.accumulate_grad(&[1.0]);
        // Reverse topological: every consumer finishes before its producers,
        // so each node's grad is complete when its record fires.
        for node in order {
            let record = node.inner.op.borrow_mut().take();
            if let Some(record) = record {
                let grad = node.inner.grad.borrow();
                if let Some(g) = grad.as_ref() {
                    (record.backward)(g, &record.parents);
                }
            }
        }
        Ok(())
    }
}

/// Nodes reachable from `root` through tracked parents, consumers first.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    visited.insert(root.id());
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    while let Some((node, child)) = stack.pop() {
        let next_parent = node
            .inner
            .op
            .borrow()
            .as_ref()
            .and_then(|r| r.parents.get(child).cloned());
        match next_parent {
            Some(parent) => {
                stack.push((node, child + 1));
                if parent.inner.requires_grad && visited.insert(parent.id()) {
                    stack.push((parent, 0));
                }
            }
            None => order.push(node),
        }
    }
    order.reverse();
    order
}

/// Named tensor values detached from any graph; the exchange format between
/// threads, the optimizer and checkpoints.
pub type NamedTensors = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

/// Named map of trainable leaf tensors. Iteration order is lexicographic.
#[derive(Clone, Default)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a fresh trainable leaf. Names must be unique.
    pub fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f32>) -> Tensor {
        assert!(!self.map.contains_key(name), "duplicate parameter name {name}");
        let t = Tensor::param(shape, values).expect("parameter shape/length mismatch");
        self.map.insert(name.to_string(), t.clone());
        t
    }

    /// Panics on a missing name: parameter paths are fixed by the model code.
    pub fn get(&self, name: &str) -> Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .clone()
    }

    pub fn try_get(&self, name: &str) -> Option<Tensor> {
        self.map.get(name).cloned()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) {
        for t in self.map.values() {
            t.clear_grad();
        }
    }

    /// Gradients by name (zeros for parameters that received none).
    pub fn grads(&self) -> BTreeMap<String, Vec<f32>> {
        self.map
            .iter()
            .map(|(k, t)| (k.clone(), t.grad().unwrap_or_else(|| vec![0.0; t.len()])))
            .collect()
    }

    pub fn snapshot(&self) -> NamedTensors {
        self.map
            .iter()
            .map(|(k, t)| (k.clone(), (t.shape().to_vec(), t.values().to_vec())))
            .collect()
    }

    pub fn from_snapshot(snapshot: &NamedTensors) -> Self {
        let mut set = ParamSet::new();
        for (name, (shape, values)) in snapshot {
            set.insert(name, shape, values.clone());
        }
        set
    }
}

/// Uniform values in [lo, hi).
pub fn uniform_values<R: rand::Rng>(n: usize, lo: f32, hi: f32, rng: &mut R) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Glorot-style uniform init for a weight with the given fan in/out.
pub fn xavier_values<R: rand::Rng>(n: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f32> {
    let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
    uniform_values(n, -bound, bound, rng)
}
