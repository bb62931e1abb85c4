//! Adam with linear warmup and global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::config::OptimConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

/// Named gradient buffers accumulated across the studies of a batch.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) buffers: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate<F: Real>(&mut self, name: &str, grad: &[F], scale: f64) {
        let buf = self
            .buffers
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        for (b, &g) in buf.iter_mut().zip(grad) {
            *b += g.as_f64() * scale;
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.buffers.get(name).map(Vec::as_slice)
    }

    pub fn global_norm(&self) -> f64 {
        self.buffers
            .values()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.buffers.values().all(|b| b.iter().all(|g| g.is_finite()))
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: OptimConfig,
    step: usize,
    warm_from: usize,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: OptimConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            warm_from: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Ramps the learning rate up from zero again, starting with the next
    /// step. The moment estimates are kept.
    pub fn restart_warmup(&mut self) {
        self.warm_from = self.step;
    }

    /// Learning rate of the next step.
    pub fn current_lr(&self) -> f64 {
        let warm = self.cfg.warmup;
        if warm == 0 {
            self.cfg.lr
        } else {
            self.cfg.lr * ((self.step - self.warm_from + 1) as f64 / warm as f64).min(1.0)
        }
    }

    /// Applies one update to every parameter that has a gradient. Returns the
    /// pre-clipping gradient norm.
    pub fn step<F: Real>(&mut self, params: &mut ParamStore<F>, grads: &Gradients) -> Result<f64> {
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let clip = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (name, g) in &grads.buffers {
            let param = params.get_mut(name)?;
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (i, x) in param.data_mut().iter_mut().enumerate() {
                let gi = g[i] * clip;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.cfg.adam_eps);
                *x = F::from_f64_lossy(x.as_f64() - update);
            }
        }
        Ok(norm)
    }
}
