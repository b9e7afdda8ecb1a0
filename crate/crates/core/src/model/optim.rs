// AdamW with decoupled weight decay.

use super::{is_bias, Weights, TENSOR_NAMES};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Weights,
    pub v: Weights,
    pub step: u64,
}

impl AdamWState {
    pub fn new(hidden_dim: usize) -> Self {
        AdamWState {
            m: Weights::zeros(hidden_dim),
            v: Weights::zeros(hidden_dim),
            step: 0,
        }
    }
}

/// One update: `theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta`,
/// with bias-corrected moments. Bias vectors are not decayed.
pub fn adamw_step(weights: &mut Weights, grads: &Weights, state: &mut AdamWState, cfg: &AdamWConfig) {
    state.step += 1;
    let t = state.step as f64;
    let correction1 = 1.0 - math::pow(cfg.beta1, t);
    let correction2 = 1.0 - math::pow(cfg.beta2, t);
    let lr = cfg.learning_rate;
    let tensors = weights.tensors_mut();
    let moments1 = state.m.tensors_mut();
    let moments2 = state.v.tensors_mut();
    for ((((name, theta), g), m), v) in TENSOR_NAMES
        .into_iter()
        .zip(tensors)
        .zip(grads.tensors())
        .zip(moments1)
        .zip(moments2)
    {
        let decay = if is_bias(name) { 0.0 } else { cfg.weight_decay };
        for (((p, &gi), mi), vi) in theta
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / correction1;
            let v_hat = *vi / correction2;
            *p = *p - lr * m_hat / (math::sqrt(v_hat) + cfg.eps) - lr * decay * *p;
        }
    }
}
