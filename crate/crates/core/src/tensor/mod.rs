//! Minimal reverse-mode automatic differentiation on dense float arrays.
//!
//! The engine records whole-array operations on a [`Tape`] during the
//! forward pass and replays them in reverse to accumulate gradients.
//! It is generic over the element type: training runs in `f32`, gradient
//! checking runs the identical code paths in `f64`, where central finite
//! differences are meaningful.

mod conv;
mod grad_check;
mod ops;
mod tape;

pub use conv::ConvSpec;
pub use grad_check::{check_gradients, relative_error, GradCheckConfig, GradReport, ParamReport};
pub use ops::{
    batch_norm, batch_norm_eval, conv1d, conv1d_padded, dense, global_avg_pool, l1_loss, relu,
    relu_owned, residual_add, residual_add_owned, weight_standardize, BatchNormOut,
};
pub use tape::{Gradients, NodeId, Tape};

use crate::error::{Error, Result};
use std::sync::Arc;

/// Float element type the engine can run on.
///
/// The two implementations dispatch the inner matrix product to
/// `matrixmultiply`'s `sgemm`/`dgemm`.
pub trait Element:
    Copy
    + Default
    + PartialOrd
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    /// C <- alpha * A(m x k) * B(k x n) + beta * C, with arbitrary
    /// element strides per operand.
    ///
    /// # Safety
    /// Pointers must be valid for every element addressed by the given
    /// dimensions and strides, and output regions must not alias inputs.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A shape-carrying dense array, optionally linked to a tape node.
///
/// Data is row-major and shared via `Arc`, so tensors clone cheaply and
/// read-only copies can cross threads. `grad` is populated only on
/// `requires_grad` leaves, after a backward pass.
#[derive(Debug, Clone)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    requires_grad: bool,
    grad: Option<Vec<E>>,
    node: Option<NodeId>,
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor from raw data; errors when the element count does
    /// not match the shape product or a dimension is zero.
    pub fn from_vec(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero dimension in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
            grad: None,
            node: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![E::ZERO; numel]),
            requires_grad: false,
            grad: None,
            node: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: E) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![value; numel]),
            requires_grad: false,
            grad: None,
            node: None,
        }
    }

    /// Scalar (rank-0) tensor.
    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: vec![],
            data: Arc::new(vec![value]),
            requires_grad: false,
            grad: None,
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access to the underlying buffer; copies only if other
    /// handles to the same allocation are still alive.
    pub fn data_mut(&mut self) -> &mut [E] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Mutable access only when this tensor is the sole owner of its
    /// buffer; never copies.
    pub(crate) fn try_unique_mut(&mut self) -> Option<&mut [E]> {
        Arc::get_mut(&mut self.data).map(Vec::as_mut_slice)
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Marks this tensor as a trainable leaf. Gradient buffers appear
    /// only after [`Tensor::set_grad`] (driven by a backward pass).
    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<E>) {
        debug_assert!(self.requires_grad, "grad assigned to non-grad tensor");
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }


    pub(crate) fn set_node(&mut self, node: Option<NodeId>) {
        self.node = node;
    }

    /// The scalar value of a single-element tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Same data viewed under a new shape with equal element count.
    /// Gradient-transparent: the result shares this tensor's tape node.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor<E>> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero dimension in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::invalid(format!(
                "cannot view {} elements as {shape:?}",
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
            requires_grad: self.requires_grad,
            grad: None,
            node: self.node,
        })
    }

    /// Element-wise conversion to another element type (used to move
    /// models between the f32 training path and the f64 checking path).
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        let data: Vec<T> = self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect();
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
            requires_grad: self.requires_grad,
            grad: None,
            node: None,
        }
    }
}
