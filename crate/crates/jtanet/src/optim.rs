//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Per-parameter moment estimates plus the shared step counter. Moments are
/// created lazily the first time a parameter receives a gradient, so the
/// state always mirrors exactly the parameters being trained.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState { config, t: 0, m: BTreeMap::new(), v: BTreeMap::new() })
    }

    /// Applies one Adam step to every parameter named in `grads`.
    ///
    /// All gradients are validated finite before anything is touched; a NaN
    /// or Inf anywhere rejects the whole step and leaves parameters, moments,
    /// and the step counter exactly as they were.
    pub fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            g.validate_finite(&format!("gradient for {name}"))?;
        }

        self.t += 1;
        let t = self.t as i32;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let m_corr = 1.0 - beta1.powi(t);
        let v_corr = 1.0 - beta2.powi(t);

        for (name, g) in grads {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let p = params.get_mut(name)?;
            let (md, vd, pd, gd) = (m.data_mut(), v.data_mut(), p.data_mut(), g.data());
            for i in 0..gd.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
                let m_hat = md[i] / m_corr;
                let v_hat = vd[i] / v_corr;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
