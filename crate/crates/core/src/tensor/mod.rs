//! Minimal dense-tensor compute with hand-derived reverse-mode gradients.
//!
//! Everything is 64-bit, single-threaded, and deterministic: a fixed seed
//! yields bit-identical parameters after any fixed training schedule. There
//! is no tape; each layer exposes `forward` (inference, read-only) and a
//! train-time path that returns the cache its `backward` needs.

mod checkpoint;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use layers::{Conv2d, Dense, MaxPool2};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Mismatch { expected: Vec<usize>, got: Vec<usize> },
}

/// Dense row-major tensor of up to 4 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(!shape.is_empty() && shape.len() <= 4);
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert!(!shape.is_empty() && shape.len() <= 4);
        assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { shape: shape.to_vec(), data }
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

    pub fn check_shape(&self, expected: &[usize]) -> Result<(), ShapeError> {
        if self.shape == expected {
            Ok(())
        } else {
            Err(ShapeError::Mismatch { expected: expected.to_vec(), got: self.shape.clone() })
        }
    }

    pub(crate) fn assert_finite(&self) {
        debug_assert!(self.data.iter().all(|v| v.is_finite()), "non-finite tensor entry");
    }
}

/// A parameter block with its gradient accumulator and Adam state.
#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn from_values(shape: &[usize], value: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut p = Self::zeros(shape);
        p.value = value;
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Adam hyper-parameters. Defaults: beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One Adam update with bias correction; consumes (zeroes) the gradients
/// and advances each parameter's step counter.
pub fn adam_step(params: &mut [&mut Param], cfg: &AdamConfig) {
    for param in params.iter_mut() {
        param.steps += 1;
        let t = param.steps as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..param.value.len() {
            let g = param.grad[i];
            param.m[i] = cfg.beta1 * param.m[i] + (1.0 - cfg.beta1) * g;
            param.v[i] = cfg.beta2 * param.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = param.m[i] / bc1;
            let v_hat = param.v[i] / bc2;
            param.value[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            param.grad[i] = 0.0;
        }
        debug_assert!(param.value.iter().all(|v| v.is_finite()));
    }
}

/// Rectified linear unit.
pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(x.shape(), data)
}

/// Backward of [`relu`]: passes gradient where the input was positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub fn tanh(x: &Tensor) -> Tensor {
    Tensor::from_vec(x.shape(), x.data.iter().map(|v| v.tanh()).collect())
}

/// Backward of [`tanh`] given its output: `g * (1 - y^2)`.
pub fn tanh_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&y, &g)| g * (1.0 - y * y))
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// Numerically stable softmax over a vector.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
