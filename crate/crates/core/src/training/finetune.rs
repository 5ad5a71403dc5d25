use super::trainer::{train_with_policy, EpochRecord, TrainConfig, TrainOutcome};
use crate::data::Dataset;
use crate::error::{LatteError, Result};
use crate::layers::AdapterPolicy;
use crate::model::LatteModel;

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Multiplies both learning rates of the cross-subject run.
    pub lr_scale: f64,
    /// Reject subjects without adapters instead of allocating fresh ones.
    pub strict: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr_scale: 0.1,
            strict: false,
        }
    }
}

/// Continues training a cross-subject model on one subject's trials only.
/// Only that subject's adapters and the shared weights can move. The
/// starting model competes in best-epoch selection as epoch 0, so a run
/// that never improves validation returns its input.
#[allow(clippy::too_many_arguments)]
pub fn finetune_subject(
    mut model: LatteModel,
    subject: u32,
    ds: &Dataset,
    train: &[usize],
    val: &[usize],
    base: &TrainConfig,
    ft: &FinetuneConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if model.config.adapters && !model.subjects.contains(&subject) {
        if ft.strict {
            return Err(LatteError::UnknownSubject(subject));
        }
        model.ensure_subject(subject, base.seed);
    }
    let own = |idx: &[usize]| -> Vec<usize> {
        idx.iter()
            .copied()
            .filter(|&i| ds.trials[i].subject == subject)
            .collect()
    };
    let (train, val) = (own(train), own(val));
    if train.is_empty() {
        return Err(LatteError::InvalidArgument(format!(
            "subject {subject} has no training trials"
        )));
    }
    if ft.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            best_epoch: None,
            records: Vec::new(),
        });
    }
    let mut cfg = base.clone();
    cfg.epochs = ft.epochs;
    cfg.optim.lr *= ft.lr_scale;
    cfg.optim.adapter_lr *= ft.lr_scale;
    train_with_policy(
        model,
        ds,
        &train,
        &val,
        &cfg,
        AdapterPolicy::Strict,
        true,
        on_epoch,
    )
}
