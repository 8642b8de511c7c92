//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle (`Rc`) to a flat row-major
//! buffer plus optional gradient storage. Operations live on a [`Tape`]:
//! running an op in recording mode pushes a backward closure, and
//! [`Tape::backward`] replays the closures in reverse execution order,
//! accumulating gradients into every tensor that participates in gradient
//! flow.
//!
//! Compute is `f32` by default; every op is generic over [`Element`] so the
//! same code path runs in `f64` for finite-difference gradient checking,
//! where `f32` rounding would drown the comparison.

mod adam;
pub mod gradcheck;
pub mod init;
pub mod ops;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use tape::Tape;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Error, Result};

/// Scalar element of a tensor. Implemented for `f32` (training/inference)
/// and `f64` (gradient checking).
pub trait Element:
    num_traits::Float + num_traits::NumCast + Default + Display + Debug + Sum + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self {
        num_traits::NumCast::from(v).expect("finite f64 converts to element type")
    }

    fn to_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("element converts to f64")
    }

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Element for f32 {}
impl Element for f64 {}

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(0);

struct Inner<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: Cell<bool>,
    /// True when the tensor participates in gradient flow: either a leaf
    /// with `requires_grad` or the output of a recorded operation.
    tracked: Cell<bool>,
}

/// Dense N-dimensional array, row-major, shared by handle.
pub struct Tensor<T: Element> {
    inner: Rc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Element> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor(id={}, shape={:?})", self.inner.id, self.inner.shape)
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero-sized dimension in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {numel} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self::new_inner(shape, data))
    }

    fn new_inner(shape: Vec<usize>, data: Vec<T>) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
                tracked: Cell::new(false),
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new_inner(shape.to_vec(), vec![T::zero(); numel])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self::new_inner(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: T) -> Self {
        Self::new_inner(vec![1], vec![value])
    }

    /// Marks the tensor as a learnable leaf and returns it.
    pub fn requires_grad(self) -> Self {
        self.inner.requires_grad.set(true);
        self.inner.tracked.set(true);
        self
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    pub fn needs_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub(crate) fn tracked(&self) -> bool {
        self.inner.tracked.get()
    }

    pub(crate) fn mark_tracked(&self) {
        self.inner.tracked.set(true);
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn item(&self) -> T {
        debug_assert!(self.is_scalar());
        self.inner.data.borrow()[0]
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Gradient buffer as a clone, if any backward pass has written one.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub(crate) fn grad_ref(&self) -> Option<Ref<'_, Vec<T>>> {
        let r = self.inner.grad.borrow();
        if r.is_none() {
            return None;
        }
        Some(Ref::map(r, |g| g.as_ref().unwrap()))
    }

    /// Mutable gradient buffer, zero-initialized on first access.
    pub(crate) fn grad_mut(&self) -> RefMut<'_, Vec<T>> {
        let numel = self.len();
        RefMut::map(self.inner.grad.borrow_mut(), |g| {
            g.get_or_insert_with(|| vec![T::zero(); numel])
        })
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub fn set_grad(&self, grad: Vec<T>) {
        debug_assert_eq!(grad.len(), self.len());
        *self.inner.grad.borrow_mut() = Some(grad);
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[T]) {
        let mut g = self.grad_mut();
        for (a, &b) in g.iter_mut().zip(contrib) {
            *a = *a + b;
        }
    }

    /// Largest absolute gradient entry, or `None` when no gradient exists.
    pub fn grad_linf(&self) -> Option<f64> {
        self.inner
            .grad
            .borrow()
            .as_ref()
            .map(|g| g.iter().fold(0.0f64, |m, &v| m.max(v.to_f64().abs())))
    }

    /// Deep copy with fresh identity; gradient state is not copied.
    pub fn deep_clone(&self) -> Self {
        Self::new_inner(self.inner.shape.clone(), self.to_vec())
    }
}

/// Integer tensor for label masks; never participates in autodiff.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
}

impl IntTensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {numel} elements, data has {}",
                data.len()
            )));
        }
        Ok(IntTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        IntTensor { shape: shape.to_vec(), data: vec![0; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }
}
