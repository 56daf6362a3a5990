use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Dense row-major `f64` array with an optional gradient slot.
///
/// Cloning is cheap: clones share the same storage. Data is immutable after
/// construction; only the gradient slot changes, during backward passes.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    // Leaves keep their gradient after backward; intermediates hand theirs on.
    leaf: bool,
    grad: RefCell<Option<Vec<f64>>>,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(data_len: usize, shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
    }
    if numel_of(shape) != data_len {
        return Err(Error::Shape(format!(
            "shape {shape:?} needs {} values, got {data_len}",
            numel_of(shape)
        )));
    }
    Ok(())
}

impl Tensor {
    /// Constant tensor (no gradient).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Leaf tensor, optionally tracked for gradients.
    pub fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        check_shape(data.len(), shape)?;
        Ok(Self::from_parts(data, shape.to_vec(), requires_grad, true))
    }

    pub(crate) fn from_parts(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        leaf: bool,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            leaf,
            grad: RefCell::new(None),
        }))
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![value], Vec::new(), false, true)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(vec![value; numel_of(shape)], shape)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::from_parts(
            vec![0.0; other.numel()],
            other.shape().to_vec(),
            false,
            true,
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.leaf
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(
            self.is_scalar(),
            "item() on tensor of shape {:?}",
            self.shape()
        );
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the data with no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), false, true)
    }

    /// Fresh leaf sharing nothing with `self`, tracked for gradients.
    pub fn to_leaf(&self) -> Tensor {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), true, true)
    }

    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn accumulate_grad_owned(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    pub(crate) fn take_grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow_mut().take()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
