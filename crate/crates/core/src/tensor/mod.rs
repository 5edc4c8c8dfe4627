//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a shared handle (`Arc`) to a dense row-major buffer plus
//! an optional gradient buffer and an optional graph node. Operations that
//! consume tensors with `requires_grad` record a node holding the parent
//! handles and a backward closure; [`Tensor::backward`] walks the recorded
//! graph in reverse topological order, accumulates gradients into every
//! participating tensor, and frees the graph as it goes.
//!
//! The scalar type is generic over [`Real`] so the same operator definitions
//! can be instantiated at `f64` for high-precision finite-difference checks;
//! production models use the `f32` default throughout.

mod adam;
mod gradcheck;
mod ops;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, RwLock};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Scalar types tensors can hold: IEEE floats with the numeric conversions
/// and sampling hooks the library needs.
pub trait Real:
    Float + FromPrimitive + std::iter::Sum + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Draw one sample from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossy conversion to `f64` (exact for `f32` and `f64`).
    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Convert an `f64` constant to the tensor scalar type.
pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("float constant converts")
}

/// Operation tag carried by graph nodes, used for diagnostics and for the
/// fused softmax/cross-entropy backward path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Op {
    Matmul,
    Bmm,
    TransposeLast2,
    Add,
    AddBias,
    Scale,
    MulElem,
    Sum,
    Softmax,
    Gelu,
    LayerNorm,
    CrossEntropy,
    GatherRows,
    Dropout,
    Reshape,
    SplitHeads,
    MergeHeads,
    PoolFirst,
}

type BackwardFn<T> = Box<dyn Fn(&[T], &[Tensor<T>]) + Send + Sync>;

pub(crate) struct Node<T: Real> {
    pub(crate) op: Op,
    pub(crate) parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

/// A dense row-major tensor handle. Cloning is cheap and aliases storage.
pub struct Tensor<T: Real = f32> {
    inner: Arc<RwLock<Inner<T>>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { inner: Arc::clone(&self.inner) }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.read().unwrap();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .field("numel", &inner.data.len())
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    /// Build a tensor from a flat row-major buffer and a shape.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements but {} were given",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Self::from_parts(data, shape.to_vec(), false, None))
    }

    /// All-zeros tensor.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(vec![T::zero(); numel_of(shape)], shape.to_vec(), false, None)
    }

    /// Constant-filled tensor.
    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_parts(vec![value; numel_of(shape)], shape.to_vec(), false, None)
    }

    /// Rank-0-style scalar, stored as shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![value], vec![1], false, None)
    }

    /// Tensor with entries drawn i.i.d. from `Normal(0, std^2)`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: T, rng: &mut R) -> Self {
        let data = (0..numel_of(shape)).map(|_| T::standard_normal(rng) * std).collect();
        Self::from_parts(data, shape.to_vec(), false, None)
    }

    pub(crate) fn from_parts(
        data: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        node: Option<Node<T>>,
    ) -> Self {
        Tensor {
            inner: Arc::new(RwLock::new(Inner { shape, data, grad: None, requires_grad, node })),
        }
    }

    /// Build an op result: `requires_grad` propagates from the parents and a
    /// graph node is recorded only when some parent participates in autodiff.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        op: Op,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = parents.iter().any(Tensor::requires_grad_flag);
        let node = requires_grad.then_some(Node { op, parents, backward });
        Self::from_parts(data, shape, requires_grad, node)
    }

    /// Mark this tensor as a trainable leaf and return it.
    pub fn requires_grad(self) -> Self {
        self.inner.write().unwrap().requires_grad = true;
        self
    }

    /// Whether gradients flow into this tensor.
    pub fn requires_grad_flag(&self) -> bool {
        self.inner.read().unwrap().requires_grad
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.read().unwrap().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.read().unwrap().data.len()
    }

    /// Copy of the flat row-major contents.
    pub fn data(&self) -> Vec<T> {
        self.inner.read().unwrap().data.clone()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<T> {
        let inner = self.inner.read().unwrap();
        if inner.data.len() != 1 {
            return Err(Error::Dimension(format!(
                "item() needs a single-element tensor, got shape {:?}",
                inner.shape
            )));
        }
        Ok(inner.data[0])
    }

    /// Copy of the accumulated gradient, if any has been accumulated.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.read().unwrap().grad.clone()
    }

    /// Drop any accumulated gradient.
    pub fn zero_grad(&self) {
        self.inner.write().unwrap().grad = None;
    }

    /// Overwrite the contents in place; the shape must be unchanged.
    pub fn set_data(&self, data: &[T]) -> Result<()> {
        let mut inner = self.inner.write().unwrap();
        if data.len() != inner.data.len() {
            return Err(Error::Dimension(format!(
                "set_data with {} elements into shape {:?}",
                data.len(),
                inner.shape
            )));
        }
        inner.data.copy_from_slice(data);
        Ok(())
    }

    /// Overwrite one element in place (used by finite differencing).
    pub(crate) fn nudge(&self, index: usize, value: T) {
        self.inner.write().unwrap().data[index] = value;
    }

    pub(crate) fn get(&self, index: usize) -> T {
        self.inner.read().unwrap().data[index]
    }

    /// Stable address of the underlying storage, for identity audits.
    pub fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.inner) as usize
    }

    /// Whether two handles alias the same storage.
    pub fn ptr_eq(&self, other: &Tensor<T>) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Copy of this tensor's values with no graph attached.
    pub fn detach(&self) -> Tensor<T> {
        let inner = self.inner.read().unwrap();
        Self::from_parts(inner.data.clone(), inner.shape.clone(), false, None)
    }

    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        let mut inner = self.inner.write().unwrap();
        if !inner.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), inner.data.len());
        match inner.grad.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi = *gi + *di;
                }
            }
            None => inner.grad = Some(delta.to_vec()),
        }
    }

    /// Tag of the op that produced this tensor, if it carries a node.
    pub(crate) fn op_tag(&self) -> Option<Op> {
        self.inner.read().unwrap().node.as_ref().map(|n| n.op)
    }

    /// The `i`-th input of the op that produced this tensor, if recorded.
    pub(crate) fn node_parent(&self, i: usize) -> Option<Tensor<T>> {
        self.inner.read().unwrap().node.as_ref().and_then(|n| n.parents.get(i).cloned())
    }

    /// Run reverse-mode differentiation from this scalar.
    ///
    /// Gradients accumulate (sum) into every tensor on a path to a
    /// `requires_grad` leaf, so fan-out is handled by addition and repeated
    /// `backward` calls without [`Tensor::zero_grad`] also accumulate. The
    /// recorded graph is dismantled as it is consumed, so buffers captured by
    /// backward closures are freed once this returns.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.inner.read().unwrap();
            if inner.data.len() != 1 {
                return Err(Error::Dimension(format!(
                    "backward() needs a scalar loss, got shape {:?}",
                    inner.shape
                )));
            }
            if !inner.requires_grad {
                return Err(Error::Parameter(
                    "backward() on a tensor with no gradient path".into(),
                ));
            }
        }

        let order = self.topo_order();
        self.accumulate_grad(&[T::one()]);
        for tensor in order.into_iter().rev() {
            let (grad, node) = {
                let mut inner = tensor.inner.write().unwrap();
                (inner.grad.clone(), inner.node.take())
            };
            if let (Some(grad), Some(node)) = (grad, node) {
                (node.backward)(&grad, &node.parents);
            }
        }
        Ok(())
    }

    /// Iterative post-order over the recorded graph (parents before children).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        // Stack frames: (tensor, whether its parents were already expanded).
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((tensor, expanded)) = stack.pop() {
            if expanded {
                order.push(tensor);
                continue;
            }
            if !visited.insert(tensor.ptr_id()) {
                continue;
            }
            stack.push((tensor.clone(), true));
            let inner = tensor.inner.read().unwrap();
            if let Some(node) = inner.node.as_ref() {
                for parent in &node.parents {
                    if parent.requires_grad_flag() && !visited.contains(&parent.ptr_id()) {
                        stack.push((parent.clone(), false));
                    }
                }
            }
        }
        order
    }
}
