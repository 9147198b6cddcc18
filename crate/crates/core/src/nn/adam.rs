use serde::{Deserialize, Serialize};

use super::Parameter;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
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

/// First/second moment estimates for one flat parameter block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "adam_step: params/grads length");
    if state.m.len() != params.len() {
        *state = AdamState::new(params.len());
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam over an ordered list of [`Parameter`]s. The caller must pass the
/// parameters in the same order on every step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, states: Vec::new() }
    }

    /// Applies `grad * grad_scale` and zeroes the gradients afterwards.
    pub fn step(&mut self, params: &mut [&mut Parameter], grad_scale: f64) {
        if self.states.len() != params.len() {
            self.states = params.iter().map(|p| AdamState::new(p.len())).collect();
        }
        for (p, state) in params.iter_mut().zip(self.states.iter_mut()) {
            let scaled: Vec<f64> = p.grad.data().iter().map(|g| g * grad_scale).collect();
            adam_step(p.value.data_mut(), &scaled, state, &self.cfg);
            p.zero_grad();
        }
    }
}
