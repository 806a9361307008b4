//! Adam and the split main/azimuth optimizer.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ensure_unique, Parameter};
use crate::tensor::Scalar;

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_LR_AZIMUTH: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// Saved moments of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentState<T> {
    pub name: String,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Serializable optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub moments: Vec<MomentState<T>>,
}

/// Bias-corrected Adam over a fixed set of named parameters.
#[derive(Debug)]
pub struct Adam<T: Scalar> {
    config: AdamConfig,
    params: Vec<Parameter<T>>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
    updates: Vec<u64>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: Vec<Parameter<T>>) -> Result<Self> {
        ensure_unique(&params)?;
        if let Some(p) = params.iter().find(|p| !p.is_trainable()) {
            return Err(Error::Config(format!("`{}` is not trainable", p.name())));
        }
        let m = params.iter().map(|p| vec![T::zero(); p.tensor().numel()]).collect();
        let v = params.iter().map(|p| vec![T::zero(); p.tensor().numel()]).collect();
        let updates = vec![0; params.len()];
        Ok(Adam {
            config,
            params,
            m,
            v,
            step: 0,
            updates,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    /// How many times each parameter has been updated, in registration order.
    pub fn update_counts(&self) -> Vec<(String, u64)> {
        self.params
            .iter()
            .zip(&self.updates)
            .map(|(p, &n)| (p.name().to_string(), n))
            .collect()
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.tensor().zero_grad();
        }
    }

    /// Applies one update from the accumulated gradients. Every registered
    /// parameter must have a gradient.
    pub fn step(&mut self) -> Result<()> {
        let grads = self
            .params
            .iter()
            .map(|p| p.tensor().grad().ok_or_else(|| Error::MissingGrad(p.name().to_string())))
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one, lr, eps) = (T::one(), T::lit(c.lr), T::lit(c.eps));
        let t = self.step as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for (i, (p, g)) in self.params.iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            p.tensor().update_data(|data| {
                for (j, x) in data.iter_mut().enumerate() {
                    m[j] = b1 * m[j] + (one - b1) * g[j];
                    v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    *x -= lr * mhat / (vhat.sqrt() + eps);
                }
            });
            self.updates[i] += 1;
        }
        Ok(())
    }

    pub fn state(&self) -> AdamState<T> {
        AdamState {
            step: self.step,
            moments: self
                .params
                .iter()
                .enumerate()
                .map(|(i, p)| MomentState {
                    name: p.name().to_string(),
                    m: self.m[i].clone(),
                    v: self.v[i].clone(),
                })
                .collect(),
        }
    }

    /// Restores moments by parameter name.
    pub fn load_state(&mut self, state: &AdamState<T>) -> Result<()> {
        if state.moments.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer holds {} parameters, state has {}",
                self.params.len(),
                state.moments.len()
            )));
        }
        for ms in &state.moments {
            let i = self
                .params
                .iter()
                .position(|p| p.name() == ms.name)
                .ok_or_else(|| Error::Checkpoint(format!("no optimizer slot for `{}`", ms.name)))?;
            let n = self.params[i].tensor().numel();
            if ms.m.len() != n || ms.v.len() != n {
                return Err(Error::Checkpoint(format!("moment size mismatch for `{}`", ms.name)));
            }
            self.m[i] = ms.m.clone();
            self.v[i] = ms.v.clone();
        }
        self.step = state.step;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Main,
    Azimuth,
    Both,
}

/// Two Adam instances over disjoint parameter sets: the autoencoder
/// (encoder, decoder, texturizer) and the pose model.
#[derive(Debug)]
pub struct DualOptimizer<T: Scalar> {
    main: Adam<T>,
    azimuth: Option<Adam<T>>,
}

impl<T: Scalar> DualOptimizer<T> {
    pub fn new(main: Adam<T>, azimuth: Option<Adam<T>>) -> Result<Self> {
        if let Some(az) = &azimuth {
            let names: BTreeSet<&str> = main.parameters().iter().map(|p| p.name()).collect();
            for p in az.parameters() {
                let shared = main.parameters().iter().any(|q| q.tensor().same_storage(p.tensor()));
                if shared || names.contains(p.name()) {
                    return Err(Error::OverlappingParams(p.name().to_string()));
                }
            }
        }
        Ok(DualOptimizer { main, azimuth })
    }

    pub fn main(&self) -> &Adam<T> {
        &self.main
    }

    pub fn azimuth(&self) -> Option<&Adam<T>> {
        self.azimuth.as_ref()
    }

    pub fn main_mut(&mut self) -> &mut Adam<T> {
        &mut self.main
    }

    pub fn azimuth_mut(&mut self) -> Option<&mut Adam<T>> {
        self.azimuth.as_mut()
    }

    pub fn zero_grad(&self) {
        self.main.zero_grad();
        if let Some(az) = &self.azimuth {
            az.zero_grad();
        }
    }

    /// Steps the parameter groups selected by `phase`. Without an azimuth
    /// group, `Phase::Azimuth` is a no-op.
    pub fn step(&mut self, phase: Phase) -> Result<()> {
        if matches!(phase, Phase::Main | Phase::Both) {
            self.main.step()?;
        }
        if matches!(phase, Phase::Azimuth | Phase::Both) {
            if let Some(az) = &mut self.azimuth {
                az.step()?;
            }
        }
        Ok(())
    }
}
