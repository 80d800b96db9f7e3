use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Model;

/// Adam hyperparameters with an exponential per-epoch learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { base_lr: 2e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8, decay: 0.95 }
    }
}

impl AdamConfig {
    /// `base_lr · decay^epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay.powi(epoch as i32)
    }
}

/// Moment buffers for every parameter slice of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, model: &Model) -> Self {
        let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        Self::with_shapes(config, &shapes)
    }

    pub fn with_shapes(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update at the learning rate scheduled for `epoch`.
    pub fn step(&mut self, model: &mut Model, grads: &Model, epoch: usize) -> Result<()> {
        let g = grads.param_slices();
        let mut p = model.param_slices_mut();
        self.step_slices(&mut p, &g, epoch)
    }

    /// Same update over raw slices.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], epoch: usize) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter slices, {} gradient slices, {} buffers",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != self.first[i].len() {
                return Err(Error::ShapeMismatch(format!("slice {i}: {} vs {}", p.len(), g.len())));
            }
        }
        let AdamConfig { beta1, beta2, epsilon, .. } = self.config;
        let lr = self.config.lr_at(epoch);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
