//! Adam in the ascent convention, plus the warmup/decay learning-rate
//! schedule shared by every trainer.
//!
//! Because Adam normalizes each coordinate by its running second moment, the
//! update magnitude is nearly invariant to a global rescaling of the
//! gradient; mixing objectives with very different scales stays stable, which
//! is what makes large curriculum weights behave like a reweighting rather
//! than a blow-up.

use crate::error::{Error, Result};
use crate::trainers::TrainConfig;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// One ascent step: `theta += lr * m_hat / (sqrt(v_hat) + eps)`.
    /// Refuses non-finite gradients without touching any state.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Domain(format!(
                "adam length mismatch: state {}, theta {}, grad {}",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Numeric(format!("learning rate {lr} invalid")));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(
                "non-finite gradient; refusing to update parameters".into(),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] += lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

/// Backwards-compatible free-function form of [`AdamState::step`].
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    state.step(theta, grad, lr)
}

/// Linear warmup to `config.lr` over `warmup_epochs`, then multiply by
/// `lr_decay` for every further 25 epochs. Epochs are `steps_per_epoch` steps.
pub fn lr_schedule(step: usize, config: &TrainConfig) -> f64 {
    let warmup_steps = config.warmup_epochs * config.steps_per_epoch;
    if warmup_steps > 0 && step <= warmup_steps {
        return config.lr * step as f64 / warmup_steps as f64;
    }
    let unit = 25 * config.steps_per_epoch;
    let units = (step - warmup_steps) / unit;
    config.lr * config.lr_decay.powi(units as i32)
}
