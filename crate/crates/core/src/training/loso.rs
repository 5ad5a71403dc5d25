use super::metrics::mean_std;
use super::pretrain::{pretrain, PretrainConfig};
use super::trainer::{evaluate, train_cross_subject, EpochRecord, TrainConfig};
use crate::data::{split_dataset, Dataset, SplitScheme};
use crate::error::{LatteError, Result};
use crate::layers::AdapterPolicy;
use crate::model::{LatteConfig, LatteModel, PretrainDecoder};

#[derive(Clone, Debug, PartialEq)]
pub struct LosoConfig {
    pub model: LatteConfig,
    pub train: TrainConfig,
    pub scheme: SplitScheme,
    /// Seeds model initialization and the splits.
    pub seed: u64,
    pub pretrain: Option<PretrainConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LosoFold {
    pub held_out: u32,
    pub train_subjects: Vec<u32>,
    pub train_trials: usize,
    pub val_trials: usize,
    pub test_trials: usize,
    pub best_epoch: Option<usize>,
    pub accuracy: f64,
    pub auc: Option<f64>,
    /// Largest absolute logit change caused by the adapter path on the
    /// held-out subject; zero when it has no adapters.
    pub adapter_probe: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LosoReport {
    pub folds: Vec<LosoFold>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_auc: Option<f64>,
    pub std_auc: Option<f64>,
}

/// Leave-one-subject-out: one fold per subject, trained on the others and
/// tested on every trial of the held-out subject through shared weights
/// only.
pub fn run_loso(
    ds: &Dataset,
    cfg: &LosoConfig,
    on_epoch: &mut dyn FnMut(u32, &EpochRecord),
) -> Result<LosoReport> {
    let subjects = ds.subject_ids();
    if subjects.len() < 2 {
        return Err(LatteError::InvalidArgument(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    let mut folds = Vec::with_capacity(subjects.len());
    for &held in &subjects {
        let rest: Vec<usize> = (0..ds.trials.len())
            .filter(|&i| ds.trials[i].subject != held)
            .collect();
        let fold_ds = ds.with_trials(rest.iter().map(|&i| ds.trials[i].clone()).collect());
        let splits = split_dataset(&fold_ds, &cfg.scheme, cfg.seed)?;
        let train: Vec<usize> = splits.train.iter().map(|&i| rest[i]).collect();
        let val: Vec<usize> = splits.val.iter().map(|&i| rest[i]).collect();
        let test: Vec<usize> = (0..ds.trials.len())
            .filter(|&i| ds.trials[i].subject == held)
            .collect();
        if let Some(&i) = train
            .iter()
            .chain(&val)
            .find(|&&i| ds.trials[i].subject == held)
        {
            return Err(LatteError::InvalidArgument(format!(
                "trial {i} of held-out subject {held} leaked into training"
            )));
        }
        let train_subjects: Vec<u32> = subjects.iter().copied().filter(|&s| s != held).collect();

        let mut model = LatteModel::new(&cfg.model, &train_subjects, cfg.seed)?;
        if let Some(pc) = &cfg.pretrain {
            let base = LatteModel::new(&cfg.model, &[], cfg.seed)?;
            let decoder = PretrainDecoder::new(&cfg.model, cfg.seed)?;
            let out = pretrain(base, decoder, ds, &train, pc)?;
            model.adopt_pretrained(&out.model)?;
        }
        let outcome = train_cross_subject(model, ds, &train, &val, &cfg.train, &mut |r| {
            on_epoch(held, r)
        })?;
        let model = outcome.model;
        if model.adapter_banks_hold(held) {
            return Err(LatteError::InvalidArgument(format!(
                "held-out subject {held} owns adapters"
            )));
        }
        let eval = evaluate(&model, ds, &test, AdapterPolicy::ZeroForUnknown)?;
        let adapter_probe = adapter_probe(&model, ds, &test)?;
        folds.push(LosoFold {
            held_out: held,
            train_subjects,
            train_trials: train.len(),
            val_trials: val.len(),
            test_trials: test.len(),
            best_epoch: outcome.best_epoch,
            accuracy: eval.accuracy,
            auc: eval.auc,
            adapter_probe,
        });
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let aucs: Option<Vec<f64>> = folds.iter().map(|f| f.auc).collect();
    let (mean_auc, std_auc) = match aucs {
        Some(a) => {
            let (m, s) = mean_std(&a);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    Ok(LosoReport {
        folds,
        mean_accuracy,
        std_accuracy,
        mean_auc,
        std_auc,
    })
}

/// Max |logits(adapters routed) − logits(adapters off)| over `indices`.
pub(crate) fn adapter_probe(model: &LatteModel, ds: &Dataset, indices: &[usize]) -> Result<f64> {
    let mut worst = 0.0f64;
    for chunk in indices.chunks(64) {
        let batch = ds.batch(chunk);
        let with = model.logits(&batch.x, &batch.subjects, AdapterPolicy::ZeroForUnknown)?;
        let without = model.logits(&batch.x, &batch.subjects, AdapterPolicy::Off)?;
        for (a, b) in with.data().iter().zip(without.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}
