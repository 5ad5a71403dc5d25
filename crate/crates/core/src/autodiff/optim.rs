use std::collections::HashMap;

use super::param::{LrGroup, Parameter};
use super::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub adapter_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            adapter_lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Tensor,
    v: Tensor,
    step: u64,
}

/// Adam with decoupled weight decay.
///
/// Moments are keyed by parameter name and each parameter keeps its own step
/// count, so a parameter that sits out some steps (an adapter whose subject
/// was absent from the batch) is neither moved nor decayed on those steps.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    state: HashMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    /// Steps of the parameter with the most updates so far.
    pub fn max_step(&self) -> u64 {
        self.state.values().map(|m| m.step).max().unwrap_or(0)
    }

    pub fn step_count(&self, name: &str) -> u64 {
        self.state.get(name).map_or(0, |m| m.step)
    }

    /// Updates every trainable, touched parameter and clears gradients.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        let c = &self.config;
        for p in params {
            if !p.trainable || !p.touched {
                p.zero_grad();
                continue;
            }
            let lr = match p.group {
                LrGroup::Base => c.lr,
                LrGroup::DecoderAdapter => c.adapter_lr,
            };
            let st = self.state.entry(p.name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(p.value.rows(), p.value.cols()),
                v: Tensor::zeros(p.value.rows(), p.value.cols()),
                step: 0,
            });
            st.step += 1;
            let bc1 = 1.0 - c.beta1.powi(st.step as i32);
            let bc2 = 1.0 - c.beta2.powi(st.step as i32);
            let g = p.grad.data();
            let m = st.m.data_mut();
            let v = st.v.data_mut();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *w);
            }
            p.zero_grad();
        }
    }
}
