//! Exponential-moving-average target network.

use crate::mlp::ModelParams;
use crate::{Error, Result};

/// Default target decay rate.
pub const DEFAULT_DECAY: f64 = 0.99;

/// Target weights tracking `τ ← α τ + (1 − α) θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaMirror {
    target: ModelParams,
    decay: f64,
}

impl EmaMirror {
    /// Starts the target as an exact copy of `source`.
    pub fn init(source: &ModelParams, decay: f64) -> Result<Self> {
        Self::from_parts(source.clone(), decay)
    }

    pub fn from_parts(target: ModelParams, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::config(format!("decay rate must lie in [0, 1], got {decay}")));
        }
        Ok(Self { target, decay })
    }

    pub fn target(&self) -> &ModelParams {
        &self.target
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn into_target(self) -> ModelParams {
        self.target
    }

    pub fn update(&mut self, source: &ModelParams) -> Result<()> {
        if !self.target.same_shape(source) {
            return Err(Error::config("source and target networks differ in shape"));
        }
        let a = self.decay;
        // α = 1 and α = 0 are exact no-op / copy, without rounding.
        if a == 1.0 {
            return Ok(());
        }
        for (t, s) in self.target.tensors_mut().zip(source.tensors()) {
            if a == 0.0 {
                t.copy_from_slice(s);
            } else {
                // Written as a step toward the source so a target equal to
                // the source stays bit-identical.
                for (tv, &sv) in t.iter_mut().zip(s) {
                    *tv += (1.0 - a) * (sv - *tv);
                }
            }
        }
        Ok(())
    }
}
