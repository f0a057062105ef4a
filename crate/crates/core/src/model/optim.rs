//! SGD with momentum, Adam, and the learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::layers::Real;
use super::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn check_grads<T: Real>(params: &[Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!("{} gradients for {} tensors", grads.len(), params.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.data.len() != g.data.len() {
            return Err(Error::ShapeMismatch(format!("gradient for {} has {} values", p.name, g.data.len())));
        }
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    Ok(())
}

/// `v <- momentum * v + lr * g; w <- w - v`. `velocity` is created on first use.
pub fn sgd_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    lr: f64,
    momentum: f64,
    velocity: &mut Vec<Vec<T>>,
) -> Result<()> {
    check_grads(params, grads)?;
    if velocity.is_empty() {
        *velocity = params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
    }
    let (lr, m) = (T::of_f64(lr), T::of_f64(momentum));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((w, &gi), vi) in p.data.iter_mut().zip(&g.data).zip(v.iter_mut()) {
            *vi = m * *vi + lr * gi;
            *w = *w - *vi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

/// One Adam update at step `t` (1-based) with bias-corrected moments.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    lr: f64,
    t: u64,
    state: &mut AdamState<T>,
) -> Result<()> {
    if t == 0 {
        return Err(Error::param("t", "Adam steps are counted from 1"));
    }
    check_grads(params, grads)?;
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        state.v = state.m.clone();
    }
    let c1 = 1.0 - ADAM_BETA1.powf(t as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(t as f64);
    let (b1, b2) = (T::of_f64(ADAM_BETA1), T::of_f64(ADAM_BETA2));
    let (one, eps) = (T::one(), T::of_f64(ADAM_EPS));
    let (c1, c2, lr) = (T::of_f64(c1), T::of_f64(c2), T::of_f64(lr));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, &gj)) in p.data.iter_mut().zip(&g.data).enumerate() {
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Time-based decay `base / (1 + decay * epoch)` with `decay = base / total_epochs`.
pub fn decayed_lr(base_lr: f64, total_epochs: usize, epoch: usize) -> f64 {
    let decay = base_lr / total_epochs.max(1) as f64;
    base_lr / (1.0 + decay * epoch as f64)
}

/// Reduce-on-plateau bookkeeping: after `patience` consecutive epochs without
/// a val-loss improvement larger than `min_delta`, the multiplier is scaled by
/// `factor` and the counter restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    pub best: f64,
    pub wait: usize,
    pub multiplier: f64,
}

impl PlateauState {
    pub fn new(patience: usize, factor: f64, min_delta: f64) -> Self {
        Self { patience, factor, min_delta, best: f64::INFINITY, wait: 0, multiplier: 1.0 }
    }

    /// Records one epoch's val loss; returns true when the reduction fires.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.patience > 0 && self.wait >= self.patience {
            self.multiplier *= self.factor;
            self.wait = 0;
            return true;
        }
        false
    }
}

impl Default for PlateauState {
    fn default() -> Self {
        Self::new(5, 0.2, 1e-5)
    }
}

/// Learning rate for `epoch`. When `last_val_loss` is given it is fed to the
/// plateau detector first; decay and plateau compose multiplicatively.
pub fn lr_schedule(
    epoch: usize,
    base_lr: f64,
    total_epochs: usize,
    plateau: &mut PlateauState,
    last_val_loss: Option<f64>,
) -> f64 {
    if let Some(v) = last_val_loss {
        plateau.observe(v);
    }
    decayed_lr(base_lr, total_epochs, epoch) * plateau.multiplier
}
