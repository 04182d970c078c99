//! AdamW and SGD with momentum.
//!
//! Both optimizers read the gradient accumulated in each [`Param`] and update
//! its value in place. Moment buffers are keyed by parameter path so the state
//! stays aligned with the store regardless of insertion order.
//!
//! [`Param`]: crate::params::Param

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Per-parameter optimizer buffers. AdamW uses `first` and `second` moments;
/// SGD keeps its velocity in `first`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }
}

fn buffer<'a>(map: &'a mut BTreeMap<String, Vec<f64>>, path: &str, len: usize) -> &'a mut Vec<f64> {
    map.entry(path.to_string()).or_insert_with(|| vec![0.0; len])
}

/// One bias-corrected AdamW step with decoupled weight decay:
/// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
pub fn adamw_step(params: &mut ParamStore, state: &mut OptimState, cfg: &AdamWConfig) -> Result<()> {
    if cfg.lr < 0.0 || !cfg.lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate {} must be >= 0", cfg.lr)));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (path, p) in params.iter_mut() {
        let n = p.value.len();
        let m = buffer(&mut state.first, path, n);
        let v = buffer(&mut state.second, path, n);
        let grad = p.grad.data();
        for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            // m_hat == 0 implies v_hat == 0; skip the 0/0 when eps is zero.
            let adaptive = if m_hat == 0.0 { 0.0 } else { m_hat / (v_hat.sqrt() + cfg.eps) };
            *theta -= cfg.lr * (adaptive + cfg.weight_decay * *theta);
        }
    }
    Ok(())
}

/// `v = momentum * v + g; theta -= lr * v`.
pub fn sgd_momentum_step(params: &mut ParamStore, state: &mut OptimState, lr: f64, momentum: f64) -> Result<()> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be >= 0")));
    }
    state.step += 1;
    for (path, p) in params.iter_mut() {
        let vel = buffer(&mut state.first, path, p.value.len());
        let grad = p.grad.data();
        for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
            vel[i] = momentum * vel[i] + grad[i];
            *theta -= lr * vel[i];
        }
    }
    Ok(())
}
