//! Adam with bias correction, driven by a cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

impl<T: Scalar> AdamConfig<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("adam_beta1", self.beta1), ("adam_beta2", self.beta2)] {
            if !(b > T::zero() && b < T::one()) {
                return Err(Error::field(name, "must lie strictly between 0 and 1"));
            }
        }
        if !(self.eps > T::zero()) {
            return Err(Error::field("adam_eps", "must be positive"));
        }
        Ok(())
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: usize,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place. A non-finite
/// gradient aborts without touching the state.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    params: &mut [T],
    grad: &[T],
    lr: T,
    cfg: &AdamConfig<T>,
) -> Result<()> {
    debug_assert_eq!(params.len(), grad.len());
    debug_assert_eq!(state.m.len(), grad.len());
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(state.t));
    }
    state.t += 1;
    let one = T::one();
    let t = state.t as i32;
    let bc1 = one - cfg.beta1.powi(t);
    let bc2 = one - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (one - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (one - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Cosine annealing from `base` to `min` over `period` steps, restarting
/// every period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule<T> {
    pub base: T,
    pub min: T,
    pub period: usize,
}

impl<T: Scalar> CosineSchedule<T> {
    pub fn lr(&self, step: usize) -> T {
        if self.period == 0 {
            return self.base;
        }
        let phase = T::from_usize_lossy(step % self.period) / T::from_usize_lossy(self.period);
        self.min + T::lit(0.5) * (self.base - self.min) * (T::one() + (T::PI() * phase).cos())
    }
}
