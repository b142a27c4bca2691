//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer of `f64` values in
//! row-major order. Every operation that consumes a tensor requiring gradients
//! records a backward closure together with its parents. Node ids come from a
//! global monotonic counter, so sorting the reachable nodes by id yields a
//! valid topological order of the recorded computation: this ordered record is
//! the [`Tape`].
//!
//! Gradient recording can be suspended for inference with [`no_grad`].

mod conv;
mod gradcheck;
mod io;
mod ops;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use conv::Padding;
pub(crate) use ops::dot;
pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use io::{load_tensor, save_tensor, DType, TensorHeader};

/// Errors raised by tensor operations.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} does not hold {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {got:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("conv2d: unsupported kernel size {0} (expected 1 or 3)")]
    UnsupportedKernel(usize),
    #[error("{op}: channel mismatch, expected {expected} got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: range {start}..{end} out of bounds for extent {extent}")]
    RangeOutOfBounds {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}: non-finite value encountered")]
    NonFinite(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Backward closure: receives the upstream gradient and a mask of which
/// parents need gradients, returns one optional gradient per parent.
pub type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct GradFn {
    name: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Restores the previous gradient-recording state when dropped.
#[must_use = "gradient recording resumes as soon as the guard is dropped"]
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Suspends gradient recording on the current thread until the guard drops.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Reference-counted dense tensor. Cloning is cheap and shares the node.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_node(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        grad_fn: Option<GradFn>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    /// Creates a constant tensor, checking that `data` fills `shape`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor::from_node(shape.to_vec(), data, false, None))
    }

    /// Creates a leaf tensor that participates in gradient computation.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, data)?;
        Ok(t.with_grad())
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::from_node(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_node(Vec::new(), vec![value], false, None)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let data = (0..numel(shape)).map(&mut f).collect();
        Tensor::from_node(shape.to_vec(), data, false, None)
    }

    /// Records the result of a custom differentiable operation.
    ///
    /// The node only keeps its parents and backward closure when gradient
    /// recording is enabled and at least one parent requires gradients.
    pub fn from_op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let track = is_grad_enabled() && parents.iter().any(Tensor::requires_grad);
        let grad_fn = track.then(|| GradFn {
            name,
            parents,
            backward,
        });
        Tensor::from_node(shape, data, track, grad_fn)
    }

    /// Returns a new leaf sharing no history, with `requires_grad` set.
    pub fn with_grad(&self) -> Tensor {
        Tensor::from_node(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    /// Returns a constant copy cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::from_node(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Name of the operation that produced this tensor, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        Ok(self.0.data[0])
    }

    /// Accumulated gradient, if `backward` has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Back-propagates from this scalar through the recorded graph.
    ///
    /// Gradients are summed into every reachable leaf that requires them,
    /// so repeated calls accumulate until [`Tensor::zero_grad`]. Intermediate
    /// results do not keep their gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let tape = Tape::record(self);
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in tape.nodes.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(gf) = &node.0.grad_fn {
                let needs: Vec<bool> = gf.parents.iter().map(Tensor::requires_grad).collect();
                let parent_grads = (gf.backward)(&g, &needs);
                debug_assert_eq!(parent_grads.len(), gf.parents.len(), "{}", gf.name);
                for ((parent, pg), need) in gf.parents.iter().zip(parent_grads).zip(needs) {
                    let (Some(pg), true) = (pg, need) else { continue };
                    debug_assert_eq!(pg.len(), parent.numel(), "{}", gf.name);
                    match pending.get_mut(&parent.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(parent.id(), pg);
                        }
                    }
                }
            }
            if node.0.grad_fn.is_none() {
                node.accumulate_grad(&g);
            }
        }
        Ok(())
    }
}

/// Topologically ordered record of the operations reachable from a tensor.
///
/// Inputs always precede the operations consuming them.
pub struct Tape {
    nodes: Vec<Tensor>,
}

impl Tape {
    /// Collects every node reachable from `root` that requires gradients.
    pub fn record(root: &Tensor) -> Tape {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![root.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(gf.parents.iter().cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(Tensor::id);
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Tensor] {
        &self.nodes
    }

    /// Operation names in execution order, `"leaf"` for inputs.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .map(|n| n.op_name().unwrap_or("leaf"))
            .collect()
    }

    /// Parents of the node at `index`, as positions within the tape.
    pub fn parent_positions(&self, index: usize) -> Vec<usize> {
        let Some(gf) = &self.nodes[index].0.grad_fn else {
            return Vec::new();
        };
        gf.parents
            .iter()
            .filter_map(|p| self.nodes.iter().position(|n| n.id() == p.id()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_out_accumulates() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let y = x.add(&x).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn sum_of_matrix_has_unit_grad() {
        let x = Tensor::param(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn relu_subgradient() {
        let x = Tensor::param(&[2], vec![-1.0, 2.0]).unwrap();
        x.relu().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0]);
        let z = Tensor::param(&[1], vec![0.0]).unwrap();
        z.relu().sum().backward().unwrap();
        assert_eq!(z.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn mul_self_grad_matches_central_difference() {
        let f = |v: f64| v * v;
        let h = 1e-4;
        let numeric = (f(3.0 + h) - f(3.0 - h)) / (2.0 * h);
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        let analytic = x.grad().unwrap()[0];
        assert!((analytic - 6.0).abs() < 1e-12);
        assert!((analytic - numeric).abs() < 1e-6);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.relu().backward(), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn only_leaves_keep_grads() {
        let x = Tensor::param(&[3], vec![1.0, -1.0, 2.0]).unwrap();
        let a = x.sigmoid();
        let b = a.mul(&x).unwrap();
        let loss = b.sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().expect("leaf grad").len(), 3);
        for t in [&a, &b, &loss] {
            assert!(t.grad().is_none());
        }
    }

    #[test]
    fn tape_orders_inputs_first() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::param(&[2], vec![0.5, 0.5]).unwrap();
        let loss = x.mul(&w).unwrap().relu().sum();
        let tape = Tape::record(&loss);
        assert_eq!(tape.len(), 5);
        for i in 0..tape.len() {
            for p in tape.parent_positions(i) {
                assert!(p < i);
            }
        }
        assert_eq!(*tape.ops().last().unwrap(), "sum");
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = {
            let _g = no_grad();
            x.relu()
        };
        assert!(!y.requires_grad());
        assert!(x.relu().requires_grad());
    }
}
