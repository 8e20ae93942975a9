use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::real::Real;
use crate::store::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied to the parameter, not folded into the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Invalid(format!("{n} must lie in [0,1), got {b}")));
            }
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Invalid(
                "eps must be positive and weight decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay. Moment buffers are created lazily per
/// parameter name on the first step that touches it.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            step: 0,
            moments: HashMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every trainable tensor named in `grads`; frozen
    /// tensors are left alone. Returns the names actually updated.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<Vec<String>> {
        for (name, g) in grads.iter() {
            let p = store.get(name)?;
            if p.numel() != g.len() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "parameter '{name}' has {} values, gradient has {}",
                        p.numel(),
                        g.len()
                    ),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let (lr, eps, wd) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay));
        let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        let mut updated = Vec::new();
        for (name, g) in grads.iter() {
            let p = store.get_mut(name)?;
            if !p.requires_grad {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + ob1 * gv;
                *vv = b2 * *vv + ob2 * gv * gv;
                let mhat = *mv * inv_bc1;
                let vhat = *vv * inv_bc2;
                if wd > T::zero() {
                    *pv = *pv - lr * wd * *pv;
                }
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
            updated.push(name.clone());
        }
        Ok(updated)
    }
}
