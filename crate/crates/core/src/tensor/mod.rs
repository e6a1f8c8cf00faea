//! Dense row-major tensors and the handful of layer kernels the detector
//! network is built from.
//!
//! Every kernel has a matching backward function. Kernels are generic over
//! [`Real`] so the same code runs in `f32` for training and inference and in
//! `f64` for gradient checking.

mod conv;
mod dense;
mod pool;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use thiserror::Error;

pub use conv::{conv2d, conv2d_backward, conv_output_size};
pub use dense::{
    linear, linear_backward, relu, relu_backward, sgd_update, softmax, softmax_cross_entropy,
    CrossEntropy,
};
pub use pool::{maxpool2d, maxpool2d_backward, PoolIndex};

/// Floating point element type usable in tensors.
pub trait Real: Float + Default + Debug + Sum + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("{op}: invalid argument: {detail}")]
    Validation { op: &'static str, detail: String },
    #[error("training diverged: non-finite gradient in {param}")]
    NonFiniteGradient { param: &'static str },
}

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Dimension {
        op,
        detail: detail.into(),
    }
}

/// Dense n-dimensional array stored in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    /// Zero-filled tensor.
    ///
    /// Panics if any dimension is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor dims must be positive: {shape:?}"
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(dim_err(
                "from_vec",
                format!("dims must be positive, got {shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim_err(
                "from_vec",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data viewed under a different shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Interprets the tensor as `[N, C, H, W]`.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4], TensorError> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(dim_err(
                op,
                format!("expected 4-d [N,C,H,W], got {:?}", self.shape),
            )),
        }
    }

    /// Interprets the tensor as `[rows, cols]`.
    pub fn dims2(&self, op: &'static str) -> Result<[usize; 2], TensorError> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(dim_err(
                op,
                format!("expected 2-d [N,D], got {:?}", self.shape),
            )),
        }
    }

    /// Stacks equally shaped `[1, ...]` tensors along the leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self, TensorError> {
        let first = items
            .first()
            .ok_or_else(|| dim_err("stack", "no tensors to stack"))?;
        let inner = &first.shape[1..];
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut rows = 0;
        for t in items {
            if &t.shape[1..] != inner {
                return Err(dim_err(
                    "stack",
                    format!("trailing dims {:?} vs {:?}", &t.shape[1..], inner),
                ));
            }
            rows += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(inner);
        Tensor::from_vec(&shape, data)
    }

    /// Copy of rows `start..start+count` along the leading axis.
    pub fn rows(&self, start: usize, count: usize) -> Result<Self, TensorError> {
        let n = self.shape[0];
        if count == 0 || start + count > n {
            return Err(dim_err(
                "rows",
                format!("rows {start}..{} of {n}", start + count),
            ));
        }
        let stride = self.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = count;
        Tensor::from_vec(
            &shape,
            self.data[start * stride..(start + count) * stride].to_vec(),
        )
    }
}

/// Trainable weights and bias of one layer together with their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
    /// Frozen layers are skipped by [`sgd_update`].
    pub frozen: bool,
}

impl<T: Real> LayerParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Self {
        let grad_weights = Tensor::zeros(weights.shape());
        let grad_bias = Tensor::zeros(bias.shape());
        LayerParams {
            weights,
            bias,
            grad_weights,
            grad_bias,
            frozen: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(T::zero());
        self.grad_bias.fill(T::zero());
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}
