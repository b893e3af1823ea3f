//! Adam with a cosine-annealed learning rate.

use crate::error::{shape_err, Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct OptimizerState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
    pub base_lr: f64,
    /// Iteration at which the learning rate reaches zero.
    pub horizon: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(store: &ParamStore<S>, base_lr: f64, horizon: u64) -> Self {
        let zeros = |n: usize| vec![S::zero(); n];
        Self {
            m: store.iter().map(|p| zeros(p.value.len())).collect(),
            v: store.iter().map(|p| zeros(p.value.len())).collect(),
            step: 0,
            base_lr,
            horizon,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// `base · ½ · (1 + cos(π t / horizon))`
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.horizon == 0 {
            return 0.0;
        }
        let frac = t.min(self.horizon) as f64 / self.horizon as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    /// Applies one update from the gradients stored in `store`. Parameters
    /// without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        if self.step >= self.horizon {
            return Err(Error::InvalidArgument(format!(
                "optimizer step {} is past the schedule horizon {}",
                self.step, self.horizon
            )));
        }
        if store.len() != self.m.len() {
            return Err(shape_err("adam", "parameter count changed"));
        }
        let lr = self.lr_at(self.step);
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let (ob1, ob2) = (S::of(1.0 - self.beta1), S::of(1.0 - self.beta2));
        let step_size = S::of(lr / bc1);
        let inv_bc2 = S::of(1.0 / bc2);
        let eps = S::of(self.eps);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.len() != p.value.len() {
                return Err(shape_err("adam", format!("moment buffer mismatch for `{}`", p.name)));
            }
            let Some(g) = p.grad.as_ref() else {
                for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                    *mi *= b1;
                    *vi *= b2;
                }
                continue;
            };
            if g.len() != p.value.len() {
                return Err(shape_err("adam", format!("gradient shape mismatch for `{}`", p.name)));
            }
            for (((x, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + ob1 * gi;
                *vi = b2 * *vi + ob2 * gi * gi;
                *x -= step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}
