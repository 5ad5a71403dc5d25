//! Losses, metrics and the training drivers: self-supervised pretraining,
//! cross-subject training, per-subject fine-tuning and leave-one-subject-out
//! evaluation.

mod cutfill;
mod finetune;
mod loso;
mod losses;
mod metrics;
mod pretrain;
mod trainer;

pub use cutfill::{apply_cut_and_fill, CutMask};
pub use finetune::{finetune_subject, FinetuneConfig};
pub use loso::{run_loso, LosoConfig, LosoFold, LosoReport};
pub use losses::{cross_entropy_loss, cutfill_loss, reconstruction_loss};
pub use metrics::{accuracy, auc, mean_std};
pub use pretrain::{
    pretrain, reconstruction_error, Fill, PretrainConfig, PretrainOutcome, StepKind,
};
pub use trainer::{
    evaluate, train_cross_subject, EpochRecord, EvalResult, Selection, SplitName, TrainConfig,
    TrainOutcome,
};
