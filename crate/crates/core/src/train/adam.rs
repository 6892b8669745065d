use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::invalid(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Bias-corrected Adam over every tensor of a parameter store. Moments
/// and the update are computed in f64 whatever the parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self::from_parts(cfg, 0, zeros.clone(), zeros)
    }

    pub fn from_parts(cfg: AdamConfig, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Self {
        Self {
            cfg,
            t,
            m,
            v,
            _scalar: PhantomData,
        }
    }

    /// Applies one update from the gradients stored on the parameters.
    /// Parameters without a gradient are treated as having a zero gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors but the store has {}",
                self.m.len(),
                params.len()
            )));
        }
        let grads: Vec<Option<Vec<T>>> = params.tensors().iter().map(|t| t.grad()).collect();
        for ((id, name, _), g) in params.iter().zip(&grads) {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(name.to_string()));
                }
            }
            debug_assert_eq!(self.m[id.index()].len(), params.get(id).numel());
        }
        self.t += 1;
        let c = self.cfg;
        let t = self.t as f64;
        let corr1 = 1.0 - c.beta1.powf(t);
        let corr2 = 1.0 - c.beta2.powf(t);
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let next: Vec<T> = params
                .get(id)
                .data()
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let gk = g.as_ref().map_or(0.0, |g| g[k].as_f64());
                    m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                    v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                    let step = c.lr * (m[k] / corr1) / ((v[k] / corr2).sqrt() + c.eps);
                    T::from_f64(p.as_f64() - step)
                })
                .collect();
            params.set(id, next)?;
        }
        Ok(())
    }
}
