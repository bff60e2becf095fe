//! Dense tensors with reverse-mode gradients.
//!
//! A [`Tensor`] is a contiguous row-major buffer plus a shape. Forward ops
//! build an implicit graph of `Arc`-linked nodes; [`autograd::backward`]
//! walks it in reverse topological order and accumulates gradients into
//! per-tensor buffers. Data buffers are immutable after an op creates them,
//! except for leaf tensors (parameters, buffers) which the optimizer and
//! batch-norm update through [`Tensor::data_mut`] under the single-writer
//! training contract.
//!
//! Everything is generic over the float width: `f32` for training and
//! benchmarks, `f64` for finite-difference gradient checks.

use std::fmt;
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

pub mod autograd;
pub mod init;
pub mod ops;
pub mod probe;

pub use autograd::{backward, is_grad_enabled, no_grad};

/// Floating-point element of a tensor.
pub trait Element:
    num_traits::Float
    + std::iter::Sum
    + Copy
    + Send
    + Sync
    + Default
    + fmt::Debug
    + fmt::Display
    + 'static
{
    /// Width in bits, for diagnostics.
    const BITS: u32;
    /// Exact-width conversion from `f64` (narrowing for `f32`).
    fn of_f64(v: f64) -> Self;
    /// Widening conversion to `f64`.
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    const BITS: u32 = 32;
    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const BITS: u32 = 64;
    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Gradient contributions an op's backward pass hands to each parent.
pub type ParentGrads<T> = Vec<Option<Vec<T>>>;

/// Context passed to an op's backward closure.
pub struct BackwardCtx<'a, T: Element> {
    pub parents: &'a [Tensor<T>],
    pub output: &'a Tensor<T>,
    pub out_grad: &'a [T],
}

type BackwardFn<T> = Box<dyn for<'a> Fn(&BackwardCtx<'a, T>) -> ParentGrads<T> + Send + Sync>;

pub(crate) struct OpNode<T: Element> {
    pub(crate) parents: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    op: Option<OpNode<T>>,
}

/// Dense N-dimensional array handle. Clones share storage.
pub struct Tensor<T: Element> {
    inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.inner.shape,
            self.requires_grad_path()
        )
    }
}

impl<T: Element> Tensor<T> {
    fn from_parts(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Option<OpNode<T>>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        probe::record_alloc(data.len());
        Tensor {
            inner: Arc::new(Inner {
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                op,
            }),
        }
    }

    /// New leaf tensor owning `data`.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        Self::from_parts(shape.into(), data, false, None)
    }

    /// New leaf from a slice.
    pub fn from_slice(shape: impl Into<Vec<usize>>, data: &[T]) -> Self {
        Self::from_vec(shape, data.to_vec())
    }

    /// One-element tensor.
    pub fn scalar(v: T) -> Self {
        Self::from_vec(vec![1], vec![v])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_vec(shape, vec![T::zero(); n])
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_vec(shape, vec![v; n])
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    /// Mark this leaf as a trainable parameter. Only valid on leaves.
    pub fn requires_grad(self) -> Self {
        assert!(
            self.inner.op.is_none(),
            "requires_grad can only be set on leaf tensors"
        );
        Tensor::from_parts(self.shape().to_vec(), self.data().clone(), true, None)
    }

    /// Result of an op: parents and a backward closure.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, parents: Vec<Tensor<T>>, backward: BackwardFn<T>) -> Self {
        let record = autograd::is_grad_enabled() && parents.iter().any(|p| p.requires_grad_path());
        let op = record.then(|| OpNode { parents, backward });
        Self::from_parts(shape, data, false, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn elem_count(&self) -> usize {
        self.inner.shape.iter().product()
    }

    /// Read access to the data buffer.
    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.inner.data.read().expect("tensor data lock poisoned")
    }

    /// Copy the data out.
    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.elem_count(), 1, "item() requires a one-element tensor");
        self.data()[0]
    }

    /// Write access to the data buffer. Single-writer: used by the
    /// optimizer, checkpoint loading and running-stat updates only.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<T>> {
        self.inner.data.write().expect("tensor data lock poisoned")
    }

    /// True when this tensor is a leaf that was declared trainable.
    pub fn is_leaf_param(&self) -> bool {
        self.inner.requires_grad && self.inner.op.is_none()
    }

    /// True when gradients flow through this tensor.
    pub fn requires_grad_path(&self) -> bool {
        self.inner.requires_grad || self.inner.op.is_some()
    }

    /// Clone of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    /// Drop the accumulated gradient.
    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[T]) {
        let mut guard = self.inner.grad.lock().expect("grad lock poisoned");
        match guard.as_mut() {
            Some(g) => {
                assert_eq!(g.len(), contribution.len(), "gradient length mismatch");
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi = *gi + *ci;
                }
            }
            None => *guard = Some(contribution.to_vec()),
        }
    }

    pub(crate) fn op(&self) -> Option<&OpNode<T>> {
        self.inner.op.as_ref()
    }

    /// Stable key for graph walks and identity checks.
    pub fn ptr_key(&self) -> usize {
        Arc::as_ptr(&self.inner) as usize
    }

    /// Do two handles share the same storage?
    pub fn same_storage(&self, other: &Tensor<T>) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// Detached copy: same data, no graph history, not a leaf parameter.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(self.shape().to_vec(), self.to_vec())
    }

    /// Cast between float widths.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::of_f64(v.as_f64())).collect();
        Tensor::from_vec(self.shape().to_vec(), data)
    }
}

/// Row-major strides for a shape.
pub fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}
