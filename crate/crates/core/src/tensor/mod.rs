//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a reference-counted node holding a dense row-major buffer.
//! Operations on tensors that require gradients record their inputs and a
//! backward closure; [`Tensor::backward`] walks the recorded graph in reverse
//! topological order and accumulates gradients into every reachable leaf.
//!
//! Images use the `C × H × W` layout throughout.

mod adam;
mod conv;
mod gemm;
pub mod gradcheck;
pub mod nn;
mod ops;
mod resample;

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig, AdamState};
pub use conv::{conv2d, Padding};
pub use ops::*;
pub use resample::{
    blur_downsample, crop, pad_replicate, resample_separable, resize_bilinear, resize_bilinear_to,
    AxisMap, BINOMIAL_5,
};

/// Floating point element type of a tensor.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    /// `c = a · b (+ c when accumulate)` for strided matrices.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: gemm::MatRef<'_, Self>,
        b: gemm::MatRef<'_, Self>,
        c: &mut [Self],
        accumulate: bool,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

pub use gemm::MatRef;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) trait Backward<T: Scalar> {
    /// Accumulates the contribution of `grad` (w.r.t. `output`) into the
    /// gradients of `inputs`.
    fn backward(&self, inputs: &[Tensor<T>], output: &Tensor<T>, grad: &[T]);
}

struct OpRecord<T: Scalar> {
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: Box<dyn Backward<T>>,
}

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    op: Option<OpRecord<T>>,
}

/// Dense tensor participating in an autodiff graph.
pub struct Tensor<T: Scalar = f32> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.op.as_ref().map(|o| o.name))
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Option<OpRecord<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op,
            }),
        }
    }

    /// Tensor that never receives gradient.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradient (a trainable parameter).
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "parameter shape {:?} holds {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![T::zero(); numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Records the result of an operation. When no input requires gradient
    /// the result is a plain constant and nothing is recorded.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        name: &'static str,
        inputs: Vec<Tensor<T>>,
        backward: impl Backward<T> + 'static,
    ) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let op = requires_grad.then(|| OpRecord {
            name,
            inputs,
            backward: Box::new(backward),
        });
        Self::build(shape, data, requires_grad, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.data.borrow().len()
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.op.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.node.op.as_ref().map(|o| o.name)
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    /// Mutable access to the values. Intended for optimizers and
    /// initialization of leaf parameters.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.node.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.node.shape.clone(), self.to_vec(), false, None)
    }

    /// Identity of the underlying storage.
    pub fn same_storage(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} to {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            "reshape",
            vec![self.clone()],
            ops::PassThrough,
        ))
    }

    /// Converts element type; the result is detached.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::of(v.f64())).collect();
        Tensor::build(self.node.shape.clone(), data, false, None)
    }

    /// `(C, H, W)` of an image tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape() {
            &[c, h, w] => Ok((c, h, w)),
            s => Err(Error::Shape(format!("expected C×H×W tensor, got {s:?}"))),
        }
    }

    pub(crate) fn accumulate_grad(&self, f: impl FnOnce(&mut [T])) {
        if !self.node.requires_grad {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        let g = slot.get_or_insert_with(|| vec![T::zero(); numel(&self.node.shape)]);
        f(g);
    }

    pub(crate) fn add_grad(&self, delta: &[T]) {
        self.accumulate_grad(|g| {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += *b;
            }
        });
    }

    /// Back-propagates from a single-element tensor into every reachable
    /// tensor that requires gradient. Leaf gradients accumulate across calls
    /// until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.add_grad(&[T::one()]);
        for t in order.iter().rev() {
            let Some(op) = t.node.op.as_ref() else { continue };
            let grad = t.node.grad.borrow_mut().take();
            if let Some(g) = grad {
                op.backward.backward(&op.inputs, t, &g);
            }
        }
        Ok(())
    }

    /// Post-order over recorded ops reachable from `self`.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.node.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = t.node.op.as_ref() {
                for input in &op.inputs {
                    if input.requires_grad() && !seen.contains(&input.node.id) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl<T: Scalar> Drop for Node<T> {
    // Unlink long chains iteratively so dropping a deep graph cannot overflow
    // the stack.
    fn drop(&mut self) {
        let Some(op) = self.op.take() else { return };
        let mut pending: Vec<Rc<Node<T>>> = op.inputs.into_iter().map(|t| t.node).collect();
        while let Some(node) = pending.pop() {
            if let Ok(mut inner) = Rc::try_unwrap(node) {
                if let Some(op) = inner.op.take() {
                    pending.extend(op.inputs.into_iter().map(|t| t.node));
                }
            }
        }
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_, f32>, b: MatRef<'_, f32>, c: &mut [f32], acc: bool) {
        gemm::check(m, k, n, &a, &b, c);
        let beta = if acc { 1.0 } else { 0.0 };
        // SAFETY: `check` verified every strided access stays inside the slices.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0,
                a.data.as_ptr(), a.row_stride, a.col_stride,
                b.data.as_ptr(), b.row_stride, b.col_stride,
                beta, c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_, f64>, b: MatRef<'_, f64>, c: &mut [f64], acc: bool) {
        gemm::check(m, k, n, &a, &b, c);
        let beta = if acc { 1.0 } else { 0.0 };
        // SAFETY: `check` verified every strided access stays inside the slices.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0,
                a.data.as_ptr(), a.row_stride, a.col_stride,
                b.data.as_ptr(), b.row_stride, b.col_stride,
                beta, c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let w = Tensor::<f64>::param(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        sum(&w).backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn reused_tensor_accumulates() {
        let x = Tensor::<f64>::param(&[3], vec![1., -2., 0.5]).unwrap();
        let y = add(&x, &x).unwrap();
        sum(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let x = Tensor::<f64>::param(&[2], vec![1., 2.]).unwrap();
        sum(&x).backward().unwrap();
        sum(&scale(&x, 3.0)).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 4.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f32>::param(&[2], vec![1., 2.]).unwrap();
        assert!(matches!(x.backward(), Err(Error::Shape(_))));
    }

    #[test]
    fn detached_tensor_gets_no_grad() {
        let x = Tensor::<f64>::param(&[2], vec![1., 2.]).unwrap();
        let d = x.detach();
        let y = mul(&x, &d).unwrap();
        sum(&y).backward().unwrap();
        assert!(d.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![1., 2.]);
    }

    #[test]
    fn constants_record_nothing() {
        let a = Tensor::<f32>::full(&[4], 1.0);
        let b = relu(&a);
        assert!(b.is_leaf());
        assert!(!b.requires_grad());
    }

    #[test]
    fn shape_mismatch_in_constructor() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn deep_chain_drops() {
        let x = Tensor::<f32>::param(&[1], vec![1.0]).unwrap();
        let mut y = x.clone();
        for _ in 0..200_000 {
            y = add_scalar(&y, 1.0);
        }
        assert_eq!(y.item(), 200_001.0);
        drop(y);
    }
}
