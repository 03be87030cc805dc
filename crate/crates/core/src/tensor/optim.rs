use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore};
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay λ. Zero turns the update into plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamWConfig {
    pub fn adam() -> Self {
        Self {
            weight_decay: 0.0,
            ..Self::default()
        }
    }
}

/// First and second moments (double precision) plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            (0..params.len())
                .map(|i| vec![0.0; params.tensor_at(i).len()])
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub state: AdamWState,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        Self {
            config,
            state: AdamWState::new(params),
        }
    }

    pub fn with_state(config: AdamWConfig, state: AdamWState, params: &ParamStore) -> Result<Self> {
        let ok = state.m.len() == params.len()
            && state.v.len() == params.len()
            && (0..params.len()).all(|i| {
                state.m[i].len() == params.tensor_at(i).len()
                    && state.v[i].len() == params.tensor_at(i).len()
            });
        if !ok {
            contract!("optimizer state does not match the parameter store");
        }
        Ok(Self { config, state })
    }

    /// One update at learning rate `lr`:
    ///
    /// ```text
    /// m ← β1·m + (1−β1)·g        v ← β2·v + (1−β2)·g²
    /// θ ← θ − lr·( m̂ / (√v̂ + ε) + λ·θ )
    /// ```
    ///
    /// with bias-corrected `m̂`, `v̂`. The `λ·θ` term is skipped for entries
    /// whose weight-decay flag is off.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            contract!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            );
        }
        for i in 0..params.len() {
            if grads.at(i).shape() != params.tensor_at(i).shape() {
                contract!(
                    "gradient shape {:?} does not match parameter shape {:?}",
                    grads.at(i).shape(),
                    params.tensor_at(i).shape()
                );
            }
        }
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let decay = if params.decay_at(i) { weight_decay } else { 0.0 };
            let g = grads.at(i).data();
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            let theta = params.tensor_at_mut(i).data_mut();
            for k in 0..theta.len() {
                let gk = g[k] as f64;
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                let th = theta[k] as f64;
                theta[k] = (th - lr * (m_hat / (v_hat.sqrt() + eps) + decay * th)) as f32;
            }
        }
        Ok(())
    }
}
