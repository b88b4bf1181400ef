//! Dense f32 tensors and named trainable parameters.
//!
//! Storage is always f32, row-major, owned. Gradients live in an optional
//! side buffer of the same length; the autodiff tape fills them in after
//! `backward` and the optimizer consumes (and clears) them.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    /// Gradient of the same length as `data`, if one has been computed.
    pub grad: Option<Vec<f32>>,
    /// Whether autodiff should track this tensor when it enters a tape.
    pub requires_grad: bool,
}

pub fn shape_string(shape: &[usize]) -> String {
    format!("{shape:?}")
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = numel_of(&shape);
        if shape.is_empty() || n == 0 {
            return Err(Error::Degenerate {
                op: "tensor",
                detail: format!("empty shape {}", shape_string(&shape)),
            });
        }
        if data.len() != n {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                expected: format!("{n} elements for shape {}", shape_string(&shape)),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Tensor { shape, data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel_of(&shape);
        assert!(n > 0, "zeros: empty shape");
        Tensor { data: vec![0.0; n], shape, grad: None, requires_grad: false }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = numel_of(&shape);
        assert!(n > 0, "filled: empty shape");
        Tensor { data: vec![value; n], shape, grad: None, requires_grad: false }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: vec![1], data: vec![value], grad: None, requires_grad: false }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Replace the contents, keeping the shape.
    pub fn copy_from(&mut self, src: &[f32]) {
        assert_eq!(self.data.len(), src.len(), "copy_from: length mismatch");
        self.data.copy_from_slice(src);
    }

    /// Check every element is finite. NaN/Inf anywhere is an error state;
    /// callers invoke this at loss boundaries rather than after every op.
    pub fn validate_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("{context} at flat index {i} ({v})"),
                });
            }
        }
        Ok(())
    }

    /// Accumulate `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f32]) {
        assert_eq!(g.len(), self.data.len(), "accumulate_grad: length mismatch");
        match &mut self.grad {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }
}

/// A named tensor with trainability and optimizer state attached.
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    pub tensor: Tensor,
    /// Frozen parameters are skipped by the optimizer and enter tapes
    /// without gradient tracking.
    pub trainable: bool,
    /// SGD momentum buffer, allocated lazily on the first step.
    pub momentum: Option<Vec<f32>>,
}

impl Parameter {
    pub fn new(name: &str, tensor: Tensor, trainable: bool) -> Self {
        let mut tensor = tensor;
        tensor.requires_grad = trainable;
        Parameter { name: name.to_string(), tensor, trainable, momentum: None }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
        self.tensor.requires_grad = trainable;
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }
}
