//! Adaptive-moment optimizer with global gradient-norm clipping.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients are rescaled so their joint L2 norm is at most this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Optimizer state; moment buffers follow the parameter order given to
/// [`Adam::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<f64> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adam",
                lhs: vec![params.len(), self.m.len()],
                rhs: vec![grads.len()],
            });
        }
        let mut sq = 0.0;
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            sq += g.iter().map(|x| x * x).sum::<f64>();
        }
        let norm = math::sqrt(sq);
        if !norm.is_finite() {
            return Err(Error::NonFinite { term: "gradient" });
        }
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let t = self.t as f64;
        let bc1 = 1.0 - libm::pow(beta1, t);
        let bc2 = 1.0 - libm::pow(beta2, t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let data = p.data_mut();
            for i in 0..data.len() {
                let gi = g[i] * scale;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                data[i] -= lr * (m[i] / bc1) / (math::sqrt(v[i] / bc2) + eps);
            }
        }
        Ok(norm)
    }
}
