use super::Parameterized;
use crate::error::{Error, Result};

/// AdamW hyperparameters. Defaults: learning rate 5e-4, weight decay 1e-2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one buffer per parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<P: Parameterized>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.arrays().iter().map(|a| vec![0.0; a.len()]).collect();
        let d = AdamConfig::default();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
        }
    }
}

/// One AdamW update with decoupled weight decay, applied in place.
pub fn optimizer_step<P: Parameterized>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let grad_arrays = grads.arrays();
    let mut param_arrays = params.arrays_mut();
    if grad_arrays.len() != param_arrays.len() || state.first.len() != param_arrays.len() {
        return Err(Error::Shape("parameter, gradient and moment lists differ".into()));
    }
    for ((p, g), m) in param_arrays.iter().zip(&grad_arrays).zip(&state.first) {
        if p.shape() != g.shape() || m.len() != p.len() {
            return Err(Error::Shape(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in param_arrays
        .iter_mut()
        .zip(&grad_arrays)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((w, gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * (m_hat / (v_hat.sqrt() + state.eps) + weight_decay * *w);
        }
    }
    Ok(())
}
