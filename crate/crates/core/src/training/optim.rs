use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Gradients, NetworkParameters};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `base_lr` through `lr_constant_epochs`, then linear decay to zero at `total_epochs`.
    ConstantThenLinear,
    Constant,
}

/// Adam hyper-parameters and learning-rate schedule for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    pub schedule: Schedule,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::generator()
    }
}

impl OptimizerSpec {
    /// G1, G2, D1 and D2.
    pub fn generator() -> Self {
        OptimizerSpec {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            base_lr: 2e-4,
            schedule: Schedule::ConstantThenLinear,
        }
    }

    /// D3 and D4.
    pub fn conditional() -> Self {
        OptimizerSpec {
            base_lr: 1e-4,
            schedule: Schedule::Constant,
            ..OptimizerSpec::generator()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v, lo, hi) in [
            ("beta1", self.beta1, 0.0, 1.0),
            ("beta2", self.beta2, 0.0, 1.0),
        ] {
            if !(v >= lo && v < hi) {
                return Err(Error::config(field, format!("{v} is outside [{lo}, {hi})")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("eps", "must be positive"));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("base_lr", "must be finite and >= 0"));
        }
        Ok(())
    }
}

pub(crate) fn scheduled_lr(spec: &OptimizerSpec, epoch: u32, lr_constant_epochs: u32, total_epochs: u32) -> Result<f64> {
    if epoch < 1 || epoch > total_epochs {
        return Err(Error::Range(format!("epoch {epoch} (valid: 1..={total_epochs})")));
    }
    Ok(match spec.schedule {
        Schedule::Constant => spec.base_lr,
        Schedule::ConstantThenLinear => {
            if epoch <= lr_constant_epochs {
                spec.base_lr
            } else {
                let decay = (epoch - lr_constant_epochs) as f64 / (total_epochs - lr_constant_epochs) as f64;
                spec.base_lr * (1.0 - decay)
            }
        }
    })
}

/// First and second moment estimates for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParameters) -> Self {
        let zeros = params.zeros_like().0;
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().chain(self.v.iter_mut()).for_each(|t| t.fill(0.0));
    }

    /// One bias-corrected Adam update. Moments advance even when `lr == 0`.
    pub fn apply(&mut self, spec: &OptimizerSpec, lr: f64, params: &mut NetworkParameters, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - spec.beta1.powi(t);
        let c2 = 1.0 - spec.beta2.powi(t);
        let (b1, b2, eps) = (spec.beta1, spec.beta2, spec.eps);
        for (((p, g), m), v) in params.values_mut().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}
