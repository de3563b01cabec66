//! AdamW with decoupled weight decay, plus the warmup/cosine LR schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// First/second moment buffers keyed by parameter name. Serialized into
/// checkpoints so a resumed run reproduces the original trajectory exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamW {
    /// Call once per optimizer step, before any `update`.
    pub fn begin_step(&self, state: &mut AdamState) {
        state.step += 1;
    }

    /// In-place AdamW update of one parameter tensor.
    /// Decay is decoupled: p -= lr*wd*p independently of the moment update.
    pub fn update(
        &self,
        state: &mut AdamState,
        name: &str,
        param: &mut Tensor,
        grad: &Tensor,
        lr: f64,
    ) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::ShapeMismatch {
                op: "adamw_update",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let n = param.numel();
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        if m.len() != n {
            return Err(Error::State(format!(
                "optimizer state for {name} has stale size"
            )));
        }
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let p = param.data_mut();
        let g = grad.data();
        for i in 0..n {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p[i]);
        }
        Ok(())
    }
}

/// Linear warmup to the peak rate over `warmup_steps`, then cosine decay
/// to zero at the final step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, total_steps: usize, warmup_ratio: f64) -> Self {
        let warmup_steps = ((total_steps as f64) * warmup_ratio).ceil() as usize;
        LrSchedule {
            peak,
            total_steps,
            warmup_steps: warmup_steps.min(total_steps),
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        let step = step.min(self.total_steps - 1);
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - 1).saturating_sub(self.warmup_steps).max(1);
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        self.peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
