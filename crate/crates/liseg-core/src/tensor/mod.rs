//! Dense f64 tensors and the reverse-mode engine built on them.
//!
//! The engine is deliberately small: it provides exactly the differentiable
//! operations the segmentation stack needs (3D convolution, instance
//! normalization, LeakyReLU, nearest upsampling, channel softmax, voxel-wise
//! cross-entropy, plus elementwise/scalar glue), all in 64-bit floats with
//! fixed accumulation order so results are reproducible bit for bit.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod tape;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_STEP};
pub use tape::{Tape, TensorId};

use crate::error::{Error, Result};

/// A dense N-dimensional array of 64-bit floats in row-major order.
///
/// The canonical dimension order for 5-d activations is `(N, C, D, H, W)`.
/// A scalar has an empty shape and a single value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{numel} values for shape {shape:?}"),
                format!("{}", values.len()),
            ));
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            values: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Option<Vec<f64>>) {
        if let Some(g) = &grad {
            debug_assert_eq!(g.len(), self.values.len());
        }
        self.grad = grad;
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Interpret the shape as `(N, C, D, H, W)`.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        if self.shape.len() != 5 {
            return Err(Error::shape(
                "dims5",
                "rank-5 tensor (N, C, D, H, W)",
                format!("rank {}", self.shape.len()),
            ));
        }
        Ok([
            self.shape[0],
            self.shape[1],
            self.shape[2],
            self.shape[3],
            self.shape[4],
        ])
    }
}
