use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Learning rate 1e-4 with first-moment decay 0.5.
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            config,
        }
    }

    /// One bias-corrected update of `param` in place.
    pub fn step(&mut self, param: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(param.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Adam over every tensor of a [`ParamSet`], one [`AdamState`] per tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Adam {
            states: params
                .tensors()
                .iter()
                .map(|t| AdamState::new(t.len(), config))
                .collect(),
        }
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Applies one update using the gradients stored in `params`, then zeroes
    /// them. Fails without touching anything if any gradient is missing.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if self.states.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} optimizer states for {} parameters",
                self.states.len(),
                params.len()
            )));
        }
        if let Some(i) = (0..params.len()).find(|&i| params.grad(i).is_none()) {
            return Err(Error::MissingGrad(params.name(i).to_string()));
        }
        for (i, state) in self.states.iter_mut().enumerate() {
            let (value, grad) = params.value_and_grad_mut(i);
            state.step(value, grad.expect("checked above"));
        }
        params.clear_grads();
        Ok(())
    }
}
