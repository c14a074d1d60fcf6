use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamKey, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    moments: BTreeMap<ParamKey, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn moments(&self, key: &ParamKey) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(key).map(|(m, v)| (m, v))
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
///
/// Gradients are checked for NaN/inf before anything is modified, so a bad
/// batch leaves both the parameters and the optimizer state untouched.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    for (key, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of `{key}`")));
        }
        let p = params.get(key)?;
        if p.shape() != g.shape() {
            return Err(Error::ParamShape {
                key: key.to_string(),
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (key, g) in grads.iter() {
        let (m, v) = state
            .moments
            .entry(key.clone())
            .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
        let p = params.get_mut(key)?;
        for (((pi, mi), vi), gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Slot;

    fn single(value: f64, grad: f64) -> (ParamStore, Gradients, ParamKey) {
        let key = ParamKey::new("p", Slot::Weight);
        let mut params = ParamStore::new();
        params.insert(key.clone(), Tensor::vector(vec![value]));
        let mut grads = Gradients::default();
        grads.accumulate(key.clone(), Tensor::vector(vec![grad]));
        (params, grads, key)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut params, grads, key) = single(0.7, 0.0);
        let mut state = AdamState::new(AdamConfig::default());
        for _ in 0..3 {
            adam_step(&mut params, &grads, &mut state).unwrap();
        }
        assert_eq!(params.get(&key).unwrap().item(), 0.7);
        assert_eq!(state.t, 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps).
        let (mut params, grads, key) = single(0.0, 1.0);
        let mut state = AdamState::new(AdamConfig::with_lr(1e-3));
        adam_step(&mut params, &grads, &mut state).unwrap();
        let delta = params.get(&key).unwrap().item();
        assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18, "{delta}");
        let (m, v) = state.moments(&key).unwrap();
        assert!(v.data()[0] >= 0.0 && m.data()[0] > 0.0);
    }

    #[test]
    fn first_step_opposes_gradient_sign() {
        for g in [-3.0, -1e-6, 2e-9, 5.0] {
            let (mut params, grads, key) = single(1.0, g);
            let mut state = AdamState::new(AdamConfig::default());
            adam_step(&mut params, &grads, &mut state).unwrap();
            let delta = params.get(&key).unwrap().item() - 1.0;
            assert_eq!(delta.signum(), -f64::signum(g));
        }
    }

    #[test]
    fn nan_gradient_aborts_without_side_effects() {
        let (mut params, grads, key) = single(1.0, f64::NAN);
        let mut state = AdamState::new(AdamConfig::default());
        let err = adam_step(&mut params, &grads, &mut state).unwrap_err();
        assert!(err.to_string().contains("p/weight"), "{err}");
        assert_eq!(state.t, 0);
        assert_eq!(params.get(&key).unwrap().item(), 1.0);
    }
}
