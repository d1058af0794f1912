//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::network::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// First and second moments stored flat, in [`Parameters::to_flat`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, num_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn for_params<P: Parameters>(config: AdamWConfig, params: &P) -> Self {
        Self::new(config, params.num_params())
    }

    /// One update of `params` from `grads`.
    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        let g = grads.to_flat();
        assert_eq!(
            g.len(),
            self.m.len(),
            "optimizer state does not match parameters"
        );
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for i in 0..g.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g[i] * g[i];
        }
        let mut i = 0;
        let (m, v) = (&self.m, &self.v);
        params.visit_mut("", &mut |_, _, data| {
            for p in data.iter_mut() {
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *p -= c.learning_rate * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *p);
                i += 1;
            }
        });
    }
}
