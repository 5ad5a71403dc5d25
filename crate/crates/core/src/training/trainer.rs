use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::cross_entropy_loss;
use super::metrics::{accuracy, auc};
use crate::autodiff::{AdamW, AdamWConfig, Graph, Tensor};
use crate::data::Dataset;
use crate::error::{LatteError, Result};
use crate::layers::{predict, AdapterPolicy, Ctx, Module};
use crate::model::LatteModel;

/// Metric that picks the best epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    Accuracy,
    /// Area under the ROC curve; falls back to accuracy when undefined.
    Auc,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::Accuracy => "accuracy",
            Selection::Auc => "auc",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            optim: AdamWConfig::default(),
            seed: 0,
            selection: Selection::Accuracy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: SplitName,
    pub loss: f64,
    pub accuracy: f64,
    pub auc: Option<f64>,
}

impl EpochRecord {
    /// Tab-separated `epoch split loss accuracy auc`; the AUC field is empty
    /// when undefined.
    pub fn tsv(&self) -> String {
        let auc = self.auc.map(|a| format!("{a:.6}")).unwrap_or_default();
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{auc}",
            self.epoch,
            self.split.name(),
            self.loss,
            self.accuracy
        )
    }
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// `logit[1] − logit[0]` per trial for two-class problems.
    pub scores: Vec<f64>,
}

impl EvalResult {
    fn metric(&self, selection: Selection) -> f64 {
        match selection {
            Selection::Auc => self.auc.unwrap_or(self.accuracy),
            Selection::Accuracy => self.accuracy,
        }
    }
}

fn summarize(logits: &Tensor, labels: &[usize], loss: f64) -> Result<EvalResult> {
    let predictions: Vec<usize> = (0..logits.rows()).map(|i| predict(logits.row(i))).collect();
    let acc = accuracy(&predictions, labels)?;
    let (scores, area) = if logits.cols() == 2 {
        let scores: Vec<f64> = (0..logits.rows())
            .map(|i| logits.get(i, 1) - logits.get(i, 0))
            .collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        let area = auc(&scores, &positive).ok();
        (scores, area)
    } else {
        (Vec::new(), None)
    };
    Ok(EvalResult {
        loss,
        accuracy: acc,
        auc: area,
        predictions,
        labels: labels.to_vec(),
        scores,
    })
}

const EVAL_BATCH: usize = 64;

/// Inference-mode loss and metrics over `indices`.
pub fn evaluate(
    model: &LatteModel,
    ds: &Dataset,
    indices: &[usize],
    policy: AdapterPolicy,
) -> Result<EvalResult> {
    if indices.is_empty() {
        return Err(LatteError::InvalidArgument(
            "evaluation set is empty".into(),
        ));
    }
    let classes = model.config.classes;
    let mut all = Tensor::zeros(indices.len(), classes);
    let mut loss_sum = 0.0;
    let mut row = 0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = ds.batch(chunk);
        let g = Graph::new();
        let x = g.constant(batch.x);
        let mut ctx = Ctx::eval();
        let logits = model.forward(&g, x, &batch.subjects, policy, &mut ctx)?;
        let loss = cross_entropy_loss(&g, logits, &batch.labels)?;
        loss_sum += g.value(loss).item() * chunk.len() as f64;
        let v = g.value(logits);
        for i in 0..chunk.len() {
            all.row_mut(row).copy_from_slice(v.row(i));
            row += 1;
        }
    }
    summarize(
        &all,
        &ds.labels_at(indices),
        loss_sum / indices.len() as f64,
    )
}

/// Result of a training run; `model` holds the parameters of the epoch with
/// the best validation score (epoch 0 is the starting point, when it
/// competes).
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: LatteModel,
    pub best_epoch: Option<usize>,
    pub records: Vec<EpochRecord>,
}

/// One optimization epoch over `train` in the order of `order`.
fn train_epoch(
    model: &mut LatteModel,
    opt: &mut AdamW,
    ds: &Dataset,
    order: &[usize],
    batch_size: usize,
    policy: AdapterPolicy,
) -> Result<EvalResult> {
    let classes = model.config.classes;
    let mut all = Tensor::zeros(order.len(), classes);
    let mut loss_sum = 0.0;
    let mut row = 0;
    for chunk in order.chunks(batch_size) {
        let batch = ds.batch(chunk);
        let g = Graph::new();
        let x = g.constant(batch.x);
        let mut ctx = Ctx::train();
        let logits = model.forward(&g, x, &batch.subjects, policy, &mut ctx)?;
        let loss = cross_entropy_loss(&g, logits, &batch.labels)?;
        let grads = g.backward(loss)?;
        model.visit_mut(&mut |p| {
            grads.accumulate([&mut *p]);
            opt.step([p]);
        });
        ctx.commit(model);
        loss_sum += g.value(loss).item() * chunk.len() as f64;
        let v = g.value(logits);
        for i in 0..chunk.len() {
            all.row_mut(row).copy_from_slice(v.row(i));
            row += 1;
        }
    }
    summarize(&all, &ds.labels_at(order), loss_sum / order.len() as f64)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn train_with_policy(
    mut model: LatteModel,
    ds: &Dataset,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    policy: AdapterPolicy,
    keep_initial: bool,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(LatteError::InvalidArgument("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(LatteError::InvalidArgument(
            "batch size must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.optim.clone());
    let mut order = train.to_vec();
    let mut best: Option<(f64, f64, usize, LatteModel)> = None;
    let mut records = Vec::new();
    let mut emit = |r: EpochRecord, records: &mut Vec<EpochRecord>| {
        on_epoch(&r);
        records.push(r);
    };
    if keep_initial && !val.is_empty() {
        let va = evaluate(&model, ds, val, AdapterPolicy::ZeroForUnknown)?;
        emit(
            EpochRecord {
                epoch: 0,
                split: SplitName::Val,
                loss: va.loss,
                accuracy: va.accuracy,
                auc: va.auc,
            },
            &mut records,
        );
        best = Some((va.metric(cfg.selection), va.loss, 0, model.clone()));
    }
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let tr = train_epoch(&mut model, &mut opt, ds, &order, cfg.batch_size, policy)?;
        emit(
            EpochRecord {
                epoch,
                split: SplitName::Train,
                loss: tr.loss,
                accuracy: tr.accuracy,
                auc: tr.auc,
            },
            &mut records,
        );
        let scored = if val.is_empty() {
            tr
        } else {
            let va = evaluate(&model, ds, val, AdapterPolicy::ZeroForUnknown)?;
            emit(
                EpochRecord {
                    epoch,
                    split: SplitName::Val,
                    loss: va.loss,
                    accuracy: va.accuracy,
                    auc: va.auc,
                },
                &mut records,
            );
            va
        };
        let metric = scored.metric(cfg.selection);
        let better = match &best {
            None => true,
            Some((m, l, _, _)) => metric > *m || (metric == *m && scored.loss < *l),
        };
        if better {
            best = Some((metric, scored.loss, epoch, model.clone()));
        }
    }
    Ok(match best {
        Some((_, _, epoch, m)) => TrainOutcome {
            model: m,
            best_epoch: Some(epoch),
            records,
        },
        None => TrainOutcome {
            model,
            best_epoch: None,
            records,
        },
    })
}

/// Trains one model jointly over every subject in `train`, each routed
/// through its own adapters, and returns the best-validation epoch.
pub fn train_cross_subject(
    model: LatteModel,
    ds: &Dataset,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    for &i in train {
        let s = ds.trials[i].subject;
        if model.config.adapters && !model.subjects.contains(&s) {
            return Err(LatteError::UnknownSubject(s));
        }
    }
    train_with_policy(
        model,
        ds,
        train,
        val,
        cfg,
        AdapterPolicy::Strict,
        false,
        on_epoch,
    )
}
