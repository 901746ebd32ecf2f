use serde::{Deserialize, Serialize};

use super::{Matrix, ParamBlock};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment accumulators for a fixed list of parameter blocks.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, blocks: &[ParamBlock]) -> Self {
        let zeros = || {
            blocks
                .iter()
                .map(|b| Matrix::zeros(b.values.rows(), b.values.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// Bias-corrected Adam update. Gradients are zeroed afterwards.
pub fn adam_step(blocks: &mut [ParamBlock], state: &mut AdamState) {
    assert_eq!(blocks.len(), state.m.len(), "adam state built for other blocks");
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for ((block, m), v) in blocks.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let values = block.values.as_mut_slice();
        let grads = block.grad.as_mut_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for i in 0..values.len() {
            let g = grads[i];
            ms[i] = beta1 * ms[i] + (1.0 - beta1) * g;
            vs[i] = beta2 * vs[i] + (1.0 - beta2) * g * g;
            if ms[i] == 0.0 {
                // coordinate has never seen a gradient
                grads[i] = 0.0;
                continue;
            }
            let m_hat = ms[i] / bc1;
            let v_hat = vs[i] / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            grads[i] = 0.0;
        }
    }
}
