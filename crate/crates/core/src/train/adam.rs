use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Updated values are rounded to `f32` so that a
/// saved checkpoint reproduces the in-memory model exactly.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, lr: f64) -> Self {
        Self {
            cfg,
            lr,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies `grads` (already averaged) to every unfrozen parameter that
    /// received one.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let values = p.tensor.data_mut();
            for (((w, gv), mv), vv) in values
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let update = self.lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                *w = (*w - update) as f32 as f64;
            }
        }
    }
}
