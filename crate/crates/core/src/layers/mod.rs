//! Hyperbolic building blocks assembled into the classifier.

pub mod attention;
pub mod boost;
pub mod conv;
pub mod hyper;
pub mod inception;
pub mod init;
pub mod lfc;
pub mod lora;
pub mod norm;
pub mod pool;
pub mod predecoder;
pub mod prototype;
pub mod routing;

use std::collections::BTreeMap;

use crate::autodiff::{Parameter, Tensor, Var};

pub use attention::LorentzAttention;
pub use boost::{BoostAdapter, BoostBank};
pub use conv::{BatchNorm, Conv1d};
pub use inception::{HyperConv, InceptionBlock, InceptionShape};
pub use lfc::LorentzFc;
pub use lora::{LoraBank, LoraFactors, LoraLinear, LoraSpec, QInit};
pub use norm::TangentLayerNorm;
pub use pool::{hyper_pool, hyper_pool_points, PoolMode, PoolWindow};
pub use predecoder::{PredecoderAdapter, PredecoderSpec, RandomProjection};
pub use prototype::{predict, prototype_logits, PrototypeSet};
pub use routing::{AdapterPolicy, SubjectRows};

/// Anything that owns parameters.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));
    /// Non-trainable state such as batch-norm running statistics.
    fn visit_buffers(&self, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}

/// Per-forward-pass state: train/eval switch, pending running-statistic
/// updates and an optional record of named intermediate nodes.
#[derive(Debug, Default)]
pub struct Ctx {
    pub train: bool,
    pub stats: BTreeMap<String, (Tensor, Tensor)>,
    pub trace: Vec<(&'static str, Var)>,
}

impl Ctx {
    pub fn train() -> Self {
        Self {
            train: true,
            ..Self::default()
        }
    }

    pub fn eval() -> Self {
        Self::default()
    }

    pub fn record_stats(&mut self, name: &str, mean: Tensor, var: Tensor) {
        self.stats.insert(name.to_string(), (mean, var));
    }

    pub fn mark(&mut self, stage: &'static str, v: Var) {
        self.trace.push((stage, v));
    }

    /// Writes recorded running statistics into the module's buffers.
    pub fn commit<M: Module + ?Sized>(&mut self, module: &mut M) {
        let stats = std::mem::take(&mut self.stats);
        module.visit_buffers_mut(&mut |name, t| {
            if let Some(base) = name.strip_suffix(".running_mean") {
                if let Some((m, _)) = stats.get(base) {
                    *t = m.clone();
                }
            } else if let Some(base) = name.strip_suffix(".running_var") {
                if let Some((_, v)) = stats.get(base) {
                    *t = v.clone();
                }
            }
        });
    }
}
