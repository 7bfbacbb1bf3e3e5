use serde::{Deserialize, Serialize};

use crate::params::ParamStore;

/// Adaptive-moment optimizer with global gradient-norm clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients whose global norm exceeds this are rescaled onto it.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: ParamStore,
    v: ParamStore,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: ParamStore::new(),
            v: ParamStore::new(),
            t: 0,
        }
    }

    /// Descent step on the entries of `params` named in `grads`. Returns the
    /// pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> f64 {
        let norm = grads.global_norm();
        let clip = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            if !self.m.contains(name) {
                self.m.insert(name.clone(), ndarray::Array2::zeros(g.dim()));
                self.v.insert(name.clone(), ndarray::Array2::zeros(g.dim()));
            }
            let m = self.m.get_mut(name).expect("moment initialized above");
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| *m = b1 * *m + (1.0 - b1) * g * clip);
            let v = self.v.get_mut(name).expect("moment initialized above");
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                let gc = g * clip;
                *v = b2 * *v + (1.0 - b2) * gc * gc
            });
            let v = self.v.get(name).expect("present");
            let m = self.m.get(name).expect("present");
            let lr = self.cfg.learning_rate;
            let eps = self.cfg.eps;
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
        norm
    }
}
