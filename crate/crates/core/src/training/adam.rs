//! ADAM with bias correction.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::network::EncoderParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
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

/// First and second moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

/// One ADAM update of `params` in place. `step_index` counts from 1.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    step_index: u64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != moments.len() {
        return Err(TrainError::Shape(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            moments.len()
        )));
    }
    if step_index == 0 {
        return Err(TrainError::Shape("step_index starts at 1".into()));
    }
    update(params, grads, &mut moments.first, &mut moments.second, step_index, cfg);
    Ok(())
}

fn update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let t = t.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// ADAM over every encoder parameter, moments laid out in `slices()` order.
pub fn adam_step_encoder(
    params: &mut EncoderParams,
    grads: &EncoderParams,
    moments: &mut AdamMoments,
    step_index: u64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if params.num_parameters() != moments.len() || grads.num_parameters() != moments.len() {
        return Err(TrainError::Shape("encoder and moment sizes differ".into()));
    }
    if step_index == 0 {
        return Err(TrainError::Shape("step_index starts at 1".into()));
    }
    let mut offset = 0;
    for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
        let n = p.len();
        if g.len() != n {
            return Err(TrainError::Shape("encoder slice shapes differ".into()));
        }
        update(
            p,
            g,
            &mut moments.first[offset..offset + n],
            &mut moments.second[offset..offset + n],
            step_index,
            cfg,
        );
        offset += n;
    }
    Ok(())
}
