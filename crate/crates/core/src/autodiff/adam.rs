//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ParamSet;

/// Adam state for one parameter set. Moment buffers are allocated on the
/// first step and must match the set's layout afterwards.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    t: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    /// Standard defaults: `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: S) -> Result<Self> {
        Self::with_betas(lr, S::from_f64_lossy(0.9), S::from_f64_lossy(0.999), S::from_f64_lossy(1e-8))
    }

    pub fn with_betas(lr: S, beta1: S, beta2: S, eps: S) -> Result<Self> {
        if !(lr > S::zero()) {
            return Err(Error::pre("adam", format!("learning rate {lr} must be positive")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(b >= S::zero() && b < S::one()) {
                return Err(Error::pre("adam", format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(eps > S::zero()) {
            return Err(Error::pre("adam", format!("eps {eps} must be positive")));
        }
        Ok(Adam { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() })
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update from the gradients currently stored in `params`.
    /// Gradients are not cleared; callers zero them when starting a new
    /// accumulation window.
    pub fn step(&mut self, params: &mut ParamSet<S>) -> Result<()> {
        if self.m.is_empty() {
            for (_, t) in params.iter() {
                self.m.push(vec![S::zero(); t.numel()]);
                self.v.push(vec![S::zero(); t.numel()]);
            }
        }
        if self.m.len() != params.len() {
            return Err(Error::contract(
                "adam::step",
                format!("optimizer tracks {} tensors, set has {}", self.m.len(), params.len()),
            ));
        }
        self.t += 1;
        let one = S::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for idx in 0..params.len() {
            let id = super::ParamId(idx);
            let name = params.name(id).to_string();
            let t = params.get_mut(id);
            if self.m[idx].len() != t.numel() {
                return Err(Error::contract(
                    "adam::step",
                    format!("moment buffer for `{name}` has stale size"),
                ));
            }
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            let grads = t.grad().to_vec();
            let values = t.values_mut();
            for i in 0..values.len() {
                let g = grads[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                if !values[i].is_finite() {
                    return Err(Error::numeric(
                        "adam::step",
                        format!("parameter `{name}` element {i} became {}", values[i]),
                    ));
                }
            }
        }
        Ok(())
    }
}
