use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters plus a step-decay learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiply the learning rate by `decay_factor` every this many steps (0 = never).
    pub decay_every: u64,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every: 30_000,
            decay_factor: 0.1,
        }
    }
}

impl AdamConfig {
    /// Learning rate in effect after `step` completed updates.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        let k = step / self.decay_every;
        let mut lr = self.lr;
        for _ in 0..k {
            lr *= self.decay_factor;
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Round parameters and moments to `f32` after every update.
    pub store_f32: bool,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |_| -> Vec<Tensor> {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(()),
            v: zeros(()),
            store_f32: true,
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.step)
    }

    /// One update of every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::DimensionMismatch(
                "optimizer state does not match parameter store".into(),
            ));
        }
        for (id, g) in grads {
            if g.shape() != store.value(*id).shape() {
                return Err(Error::DimensionMismatch(format!(
                    "gradient for {} has shape {:?}",
                    store.get(*id).name,
                    g.shape()
                )));
            }
            g.check_finite("parameter gradient")?;
        }
        let lr = self.lr();
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads {
            if !store.get(*id).trainable {
                continue;
            }
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.value_mut(*id).data_mut();
            for n in 0..p.len() {
                let gn = g.data()[n];
                m[n] = beta1 * m[n] + (1.0 - beta1) * gn;
                v[n] = beta2 * v[n] + (1.0 - beta2) * gn * gn;
                let update = lr * (m[n] / bc1) / ((v[n] / bc2).sqrt() + eps);
                p[n] -= update;
                if self.store_f32 {
                    m[n] = m[n] as f32 as f64;
                    v[n] = v[n] as f32 as f64;
                    p[n] = p[n] as f32 as f64;
                }
            }
        }
        Ok(())
    }
}
