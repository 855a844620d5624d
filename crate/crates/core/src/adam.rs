//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::mlp::{Gradients, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Applies one Adam update to `params` in place.
    ///
    /// Non-finite gradients abort the step before anything is modified.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        if grads.layers.len() != params.layers().len()
            || grads.tensors().zip(params.tensors()).any(|(g, p)| g.len() != p.len())
        {
            return Err(Error::config("gradient shapes do not match parameters"));
        }
        if let Some((ti, ei)) = first_non_finite(grads) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at tensor {ti} entry {ei} (step {})",
                self.step_count + 1
            )));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);

        let moments = self.first_moment.iter_mut().zip(self.second_moment.iter_mut());
        for ((p, g), (m, v)) in params.tensors_mut().zip(grads.tensors()).zip(moments) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

fn first_non_finite(grads: &Gradients) -> Option<(usize, usize)> {
    grads
        .tensors()
        .enumerate()
        .find_map(|(ti, t)| t.iter().position(|v| !v.is_finite()).map(|ei| (ti, ei)))
}
