//! Decoupled-weight-decay adaptive-moment optimizer with component routing.
//!
//! Each apply names the components it may touch; excluded parameters keep
//! their values, moments, and step counts untouched (the traceback stage's
//! freeze contract: bit-identical encoder parameters, decay included).

use crate::model::{Component, ModelState};

#[derive(Clone, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// global-norm clip over the included gradient entries, 0 disables
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, clip_norm: 1.0 }
    }
}

pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    /// per-parameter update count (bias correction follows each parameter's
    /// own history, since freeze routing skips parameters unevenly)
    t: Vec<u64>,
    /// how many times the last apply hit the clip
    pub clip_events: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, num_params: usize) -> Self {
        Self { cfg, m: vec![0.0; num_params], v: vec![0.0; num_params], t: vec![0; num_params], clip_events: 0 }
    }

    /// One update over the parameters owned by `components`. Gradients are a
    /// full flat buffer; entries outside the routed components are ignored.
    /// Returns the pre-clip gradient norm.
    pub fn step(&mut self, state: &mut ModelState, grads: &[f64], components: &[Component]) -> f64 {
        assert_eq!(grads.len(), state.flat.len(), "gradient buffer size");
        let ranges = state.component_ranges(components);

        let mut sq = 0.0;
        for r in &ranges {
            for i in r.clone() {
                sq += grads[i] * grads[i];
            }
        }
        let norm = sq.sqrt();
        let scale = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.clip_events += 1;
            self.cfg.clip_norm / norm
        } else {
            1.0
        };

        let c = &self.cfg;
        for r in &ranges {
            for i in r.clone() {
                let g = grads[i] * scale;
                self.t[i] += 1;
                let t = self.t[i] as f64;
                self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
                self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = self.m[i] / (1.0 - c.beta1.powf(t));
                let v_hat = self.v[i] / (1.0 - c.beta2.powf(t));
                state.flat[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * state.flat[i]);
            }
        }
        state.training_step += 1;
        norm
    }
}
