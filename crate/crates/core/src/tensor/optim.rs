use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW over an explicit subset of a [`ParamStore`]. Moment buffers
/// persist across steps and are checkpointable.
pub struct AdamW {
    pub cfg: AdamWConfig,
    ids: Vec<ParamId>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, ids: Vec<ParamId>, store: &ParamStore) -> Self {
        let m = ids
            .iter()
            .map(|&id| vec![0.0; store.value(id).numel()])
            .collect();
        let v = ids
            .iter()
            .map(|&id| vec![0.0; store.value(id).numel()])
            .collect();
        Self {
            cfg,
            ids,
            m,
            v,
            t: 0,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update at the configured learning rate.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.step_with_lr(store, self.cfg.lr)
    }

    /// One update at an explicit learning rate (for schedules).
    ///
    /// Rejects the whole step if any owned gradient is non-finite; moments
    /// and parameters are left untouched in that case.
    pub fn step_with_lr(&mut self, store: &mut ParamStore, lr: f32) -> Result<()> {
        for &id in &self.ids {
            if !store.grad(id).is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter '{}'",
                    store.get(id).name
                )));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);
        for (slot, &id) in self.ids.iter().enumerate() {
            if !store.get(id).trainable {
                continue;
            }
            let grad = store.grad(id).data().to_vec();
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let p = &mut store.params_mut(id).value;
            let pd = p.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                pd[i] -= lr * self.cfg.weight_decay * pd[i];
                pd[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }

    /// (moment1, moment2) buffers for the `slot`-th owned parameter.
    pub fn moments(&self, slot: usize) -> (&[f32], &[f32]) {
        (&self.m[slot], &self.v[slot])
    }

    pub fn restore(&mut self, slot: usize, m: Vec<f32>, v: Vec<f32>, t: u64) {
        self.m[slot] = m;
        self.v[slot] = v;
        self.t = t;
    }
}
