//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::lstm::LstmWeights;
use super::SeqnetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One update of `theta` in place; `t` is the 1-based step count.
pub fn adam_update(
    theta: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    grad: &[f64],
    cfg: &AdamConfig,
    t: u64,
) {
    debug_assert!(t >= 1);
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for k in 0..theta.len() {
        let g = grad[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        theta[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Moment estimates for every weight block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: LstmWeights,
    v: LstmWeights,
    t: u64,
}

impl AdamState {
    pub fn new(like: &LstmWeights) -> Self {
        let (d, h) = (like.input_dim(), like.hidden_units());
        Self {
            m: LstmWeights::zeros(d, h),
            v: LstmWeights::zeros(d, h),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

pub fn adam_step(
    weights: &mut LstmWeights,
    state: &mut AdamState,
    grads: &LstmWeights,
    cfg: &AdamConfig,
) -> Result<(), SeqnetError> {
    weights.check_like(grads)?;
    weights.check_like(&state.m)?;
    state.t += 1;
    let t = state.t;
    let theta = weights.blocks_mut();
    let m = state.m.blocks_mut();
    let v = state.v.blocks_mut();
    let g = grads.blocks();
    for (((theta, m), v), g) in theta.into_iter().zip(m).zip(v).zip(g) {
        adam_update(theta, m, v, g, cfg, t);
    }
    Ok(())
}
