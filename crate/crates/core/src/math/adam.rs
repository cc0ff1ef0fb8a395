//! Adam with bias correction.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment accumulators for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    shape: Vec<usize>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            shape: shape.to_vec(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Advances the state with `grad` and returns the parameter delta.
    pub fn step(&mut self, grad: &Tensor, lr: f64) -> Result<Tensor> {
        if grad.shape() != self.shape.as_slice() {
            return Err(Error::Shape(format!(
                "adam state {:?} vs gradient {:?}",
                self.shape,
                grad.shape()
            )));
        }
        if !(lr > 0.0) {
            return Err(Error::Usage(format!("learning rate must be positive, got {lr}")));
        }
        grad.check_finite()
            .map_err(|e| Error::Numeric(format!("gradient: {e}")))?;

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut delta = vec![0.0; grad.len()];
        for (k, &g) in grad.data().iter().enumerate() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            delta[k] = -lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Tensor::from_vec(&self.shape, delta)
    }
}

/// One Adam step; free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, grad: &Tensor, lr: f64) -> Result<Tensor> {
    state.step(grad, lr)
}
