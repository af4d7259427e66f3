//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Moment estimates for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamSlot {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Number of updates applied through this slot.
    pub fn steps(&self) -> u64 {
        self.t
    }
}

impl AdamW {
    pub fn update(&self, slot: &mut AdamSlot, param: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(param.len(), grad.len());
        debug_assert_eq!(param.len(), slot.m.len());
        slot.t += 1;
        let c1 = 1.0 - self.beta1.powi(slot.t as i32);
        let c2 = 1.0 - self.beta2.powi(slot.t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
            slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = slot.m[i] / c1;
            let v_hat = slot.v[i] / c2;
            param[i] *= 1.0 - self.lr * self.weight_decay;
            param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
