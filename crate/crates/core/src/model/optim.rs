//! Adam with decoupled weight decay and a linear warmup schedule.

use crate::manifold::Curvature;
use crate::model::HyperbolicModel;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(model: &HyperbolicModel, weight_decay: f64) -> Self {
        let n = model.num_params();
        Self {
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update at learning rate `lr`. Weight decay is
    /// applied to weight matrices only; the log-curvature is clamped to its
    /// allowed range afterwards.
    pub fn step(&mut self, model: &mut HyperbolicModel, grads: &HyperbolicModel, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut k = 0;
        for (param, grad) in model.params_mut().into_iter().zip(grads.params()) {
            let decay = if param.decays { self.weight_decay } else { 0.0 };
            for (p, g) in param.values.iter_mut().zip(grad.values) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + EPSILON) + decay * *p);
                k += 1;
            }
        }
        model.log_c = Curvature::clamp_log(model.log_c);
    }
}

/// Learning rate for optimizer step `step` (0-based) of `epoch` (0-based):
/// ramps linearly from `base / (warmup_epochs * steps_per_epoch)` to `base`
/// at the last step of epoch `warmup_epochs - 1`, then stays at `base`.
pub fn warmup_lr(base: f64, warmup_epochs: usize, epoch: usize, step: usize, steps_per_epoch: usize) -> f64 {
    if warmup_epochs == 0 {
        return base;
    }
    let progress = (epoch as f64 + (step + 1) as f64 / steps_per_epoch.max(1) as f64) / warmup_epochs as f64;
    base * progress.min(1.0)
}
