use serde::{Deserialize, Serialize};

use super::Matrix;

/// A named trainable tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub values: Matrix,
    #[serde(skip, default = "empty_grad")]
    pub grad: Matrix,
}

fn empty_grad() -> Matrix {
    Matrix::zeros(0, 0)
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, values: Matrix) -> Self {
        let grad = Matrix::zeros(values.rows(), values.cols());
        Self {
            name: name.into(),
            values,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        if self.grad.shape() != self.values.shape() {
            self.grad = Matrix::zeros(self.values.rows(), self.values.cols());
        } else {
            self.grad.fill(0.0);
        }
    }

    /// Restores the gradient buffer after deserialization.
    pub(crate) fn ensure_grad(&mut self) {
        if self.grad.shape() != self.values.shape() {
            self.grad = Matrix::zeros(self.values.rows(), self.values.cols());
        }
    }
}

/// Total number of scalar parameters across `blocks`.
pub fn param_count(blocks: &[ParamBlock]) -> usize {
    blocks.iter().map(|b| b.values.len()).sum()
}

/// Concatenates all parameter values in block order.
pub fn flatten_values(blocks: &[ParamBlock]) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count(blocks));
    for b in blocks {
        out.extend_from_slice(b.values.as_slice());
    }
    out
}

/// Concatenates all gradients in block order.
pub fn flatten_grads(blocks: &[ParamBlock]) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count(blocks));
    for b in blocks {
        out.extend_from_slice(b.grad.as_slice());
    }
    out
}

/// Inverse of [`flatten_values`]. Panics if `flat` has the wrong length.
pub fn assign_values(blocks: &mut [ParamBlock], flat: &[f64]) {
    assert_eq!(flat.len(), param_count(blocks), "flat parameter length mismatch");
    let mut off = 0;
    for b in blocks {
        let n = b.values.len();
        b.values.as_mut_slice().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

pub fn zero_grads(blocks: &mut [ParamBlock]) {
    blocks.iter_mut().for_each(ParamBlock::zero_grad);
}
