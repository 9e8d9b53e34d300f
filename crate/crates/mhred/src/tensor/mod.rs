//! Dense tensors and the reverse-mode differentiation graph.
//!
//! Values are double precision, stored row-major. Broadcasting is limited to
//! bias-row addition so every backward rule stays auditable.

mod graph;

pub use graph::{Graph, NodeId};

use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense numeric array with an optional gradient accumulator.
///
/// `grad` is present exactly when `requires_grad` is set; it has the same
/// shape as `data` and accumulates across backward passes until
/// [`Tensor::zero_grad`] is called.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from row-major data, checking the element count.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                op: "from_vec",
                msg: format!("zero dimension in {shape:?}"),
            });
        }
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                msg: format!("shape {shape:?} implies {numel} elements, got {}", data.len()),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    /// Samples every element from the uniform distribution on `[lo, hi)`.
    pub fn uniform<R: Rng>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(lo..hi)).collect();
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a trainable parameter, allocating its gradient.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, delta: &[f64]) {
        if let Some(g) = self.grad.as_mut() {
            debug_assert_eq!(g.len(), delta.len());
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += di;
            }
        }
    }
}

/// Shared handle to a tensor that outlives any single graph.
///
/// Parameters are stored behind this handle; every forward pass inserts them
/// as graph leaves and backward accumulates into the shared gradient. A graph
/// is single-threaded, so plain `Rc<RefCell<..>>` sharing is enough.
#[derive(Debug, Clone)]
pub struct SharedTensor(Rc<RefCell<Tensor>>);

impl SharedTensor {
    pub fn new(tensor: Tensor) -> Self {
        Self(Rc::new(RefCell::new(tensor)))
    }

    /// Fresh trainable parameter with uniform initialization.
    pub fn param_uniform<R: Rng>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::new(Tensor::uniform(shape, lo, hi, rng).with_grad())
    }

    pub fn borrow(&self) -> Ref<'_, Tensor> {
        self.0.borrow()
    }

    pub fn borrow_mut(&self) -> RefMut<'_, Tensor> {
        self.0.borrow_mut()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().numel()
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().zero_grad();
    }

    /// Identity of the underlying allocation, used for leaf deduplication.
    pub(crate) fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Deep copy with an independent allocation (gradient reset to zero).
    pub fn deep_clone(&self) -> Self {
        let t = self.0.borrow();
        let mut copy = Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            requires_grad: t.requires_grad,
            grad: None,
        };
        if copy.requires_grad {
            copy.grad = Some(vec![0.0; copy.data.len()]);
        }
        Self::new(copy)
    }

    /// Overwrites the tensor's values in place (shapes must match).
    pub fn copy_data_from(&self, other: &SharedTensor) {
        let src = other.0.borrow();
        let mut dst = self.0.borrow_mut();
        assert_eq!(src.shape, dst.shape, "copy_data_from shape mismatch");
        dst.data.copy_from_slice(&src.data);
    }
}
