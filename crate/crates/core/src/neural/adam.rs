use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate after `epoch` epochs of multiplicative decay.
pub fn lr_at_epoch(base_lr: f64, epoch: usize, decay: f64) -> f64 {
    base_lr * decay.powi(epoch as i32)
}

/// Adam moments and schedule for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// Updates applied so far; also the epoch index of the next update.
    pub step: usize,
    pub base_lr: f64,
    /// Per-epoch multiplicative retention of the learning rate.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(n_params: usize, base_lr: f64, decay: f64) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step: 0,
            base_lr,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Rate used by the next update.
    pub fn current_lr(&self) -> f64 {
        lr_at_epoch(self.base_lr, self.step, self.decay)
    }
}

/// One bias-corrected Adam update at the scheduled learning rate.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "params {}, grads {}, optimizer {}",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    let lr = state.current_lr();
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}
