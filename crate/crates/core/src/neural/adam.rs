use serde::{Deserialize, Serialize};

use super::params::DnnParams;

/// Optimizer settings shared by [`adam_step`] and the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping threshold.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(count: usize) -> Self {
        Self {
            m: vec![0.0; count],
            v: vec![0.0; count],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Bias-corrected Adam update, in place. Returns the global gradient norm
/// before clipping.
pub fn adam_step(params: &mut DnnParams, grads: &DnnParams, state: &mut AdamState, cfg: &AdamConfig) -> f64 {
    assert_eq!(params.count(), grads.count());
    assert_eq!(params.count(), state.m.len());
    let norm = grads.as_flat().iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = match cfg.clip_norm {
        Some(c) if norm > c && norm > 0.0 => c / norm,
        _ => 1.0,
    };

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let values = params.as_flat_mut();
    for (i, &g) in grads.as_flat().iter().enumerate() {
        let g = g * scale;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    norm
}
