//! Adam with bias correction, and global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Real};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: step count and first/second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    /// Zeroed moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected update; `params` and `grads` line up with the
    /// order given at construction.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) {
        assert_eq!(params.len(), self.m.len(), "adam: parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "adam: gradient count mismatch");
        self.step += 1;
        let c = self.config;
        let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
        let bc1: T = lit(1.0 - c.beta1.powf(self.step as f64));
        let bc2: T = lit(1.0 - c.beta2.powf(self.step as f64));
        let (lr, eps): (T, T) = (lit(c.lr), lit(c.eps));
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (self.m[k].data_mut(), self.v[k].data_mut(), grads[k].data());
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Scales every gradient by `max_norm / g` when the global L2 norm `g`
/// exceeds `max_norm`. Returns `g` before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let norm = grads.iter().map(|g| g.squared_norm()).sum::<T>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= k;
            }
        }
    }
    norm
}
