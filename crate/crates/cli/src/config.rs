//! Run configuration: flat `key = value` text plus `--set` overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use latte::autodiff::AdamWConfig;
use latte::data::{DatasetMeta, SplitKind, SplitScheme, SynthSpec, TaskTag};
use latte::model::{bad_value, fmt_f64, parse_bool, parse_kv_lines, parse_num, LatteConfig};
use latte::training::{Fill, FinetuneConfig, PretrainConfig, Selection, TrainConfig};
use latte::{LatteError, Result};
use sha2::{Digest, Sha256};

/// Base architecture the model keys are applied on top of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Full-size network.
    Full,
    /// Small network for desk-scale synthetic problems.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice<T> {
    Auto,
    Fixed(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adapter_lr: f64,
    pub seed: u64,
    pub selection: Choice<Selection>,
    pub split: Choice<SplitKind>,
    pub pretrain_epochs: usize,
    pub r: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub fill: Fill,
    pub finetune_epochs: usize,
    pub finetune_lr_scale: f64,
    pub strict: bool,
    pub subject: Option<u32>,
    pub eval_split: EvalSplit,
    pub synth_subjects: usize,
    pub synth_classes: usize,
    pub synth_trials: usize,
    pub synth_channels: usize,
    pub synth_timesteps: usize,
    pub synth_sessions: usize,
    pub synth_snr: f64,
    pub synth_shift: f64,
    pub synth_task: TaskTag,
    /// Architecture keys, applied in key order after the data shape.
    pub model: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthSpec::default();
        Self {
            architecture: Architecture::Full,
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 1e-2,
            adapter_lr: 1e-3,
            seed: 0,
            selection: Choice::Auto,
            split: Choice::Auto,
            pretrain_epochs: 50,
            r: 0.5,
            l_min: 0.1,
            l_max: 0.3,
            fill: Fill::ChannelMean,
            finetune_epochs: 20,
            finetune_lr_scale: 0.1,
            strict: false,
            subject: None,
            eval_split: EvalSplit::Test,
            synth_subjects: synth.subjects,
            synth_classes: synth.classes,
            synth_trials: synth.trials_per_subject,
            synth_channels: synth.channels,
            synth_timesteps: synth.timesteps,
            synth_sessions: synth.sessions,
            synth_snr: synth.snr,
            synth_shift: synth.shift,
            synth_task: TaskTag::Synthetic,
            model: BTreeMap::new(),
        }
    }
}

/// Keys taken from the dataset rather than the configuration.
const DATA_KEYS: &[&str] = &["channels", "timesteps", "classes"];

fn unknown(key: &str) -> LatteError {
    LatteError::InvalidArgument(format!("unknown config key {key}"))
}

fn key_error(key: &str, e: LatteError) -> LatteError {
    LatteError::InvalidArgument(format!("{key}: {e}"))
}

impl RunConfig {
    /// Run keys in serialization order; architecture keys follow.
    pub const KEYS: &'static [&'static str] = &[
        "architecture",
        "epochs",
        "batch_size",
        "lr",
        "weight_decay",
        "adapter_lr",
        "seed",
        "selection",
        "split",
        "pretrain_epochs",
        "r",
        "l_min",
        "l_max",
        "fill",
        "finetune_epochs",
        "finetune_lr_scale",
        "strict",
        "subject",
        "eval_split",
        "synth_subjects",
        "synth_classes",
        "synth_trials",
        "synth_channels",
        "synth_timesteps",
        "synth_sessions",
        "synth_snr",
        "synth_shift",
        "synth_task",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "architecture" => {
                self.architecture = match v {
                    "full" => Architecture::Full,
                    "desk" => Architecture::Desk,
                    _ => return Err(bad_value(key, v)),
                }
            }
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "adapter_lr" => self.adapter_lr = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "selection" => {
                self.selection = match v {
                    "auto" => Choice::Auto,
                    "accuracy" => Choice::Fixed(Selection::Accuracy),
                    "auc" => Choice::Fixed(Selection::Auc),
                    _ => return Err(bad_value(key, v)),
                }
            }
            "split" => {
                self.split = match v {
                    "auto" => Choice::Auto,
                    "instance_wise" => Choice::Fixed(SplitKind::InstanceWise),
                    "session_wise" => Choice::Fixed(SplitKind::SessionWise),
                    _ => return Err(bad_value(key, v)),
                }
            }
            "pretrain_epochs" => self.pretrain_epochs = parse_num(key, v)?,
            "r" => self.r = parse_num(key, v)?,
            "l_min" => self.l_min = parse_num(key, v)?,
            "l_max" => self.l_max = parse_num(key, v)?,
            "fill" => {
                self.fill = match v {
                    "mean" => Fill::ChannelMean,
                    _ => Fill::Constant(parse_num(key, v)?),
                }
            }
            "finetune_epochs" => self.finetune_epochs = parse_num(key, v)?,
            "finetune_lr_scale" => self.finetune_lr_scale = parse_num(key, v)?,
            "strict" => self.strict = parse_bool(key, v)?,
            "subject" => {
                self.subject = match v {
                    "all" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "eval_split" => {
                self.eval_split = match v {
                    "train" => EvalSplit::Train,
                    "val" => EvalSplit::Val,
                    "test" => EvalSplit::Test,
                    "all" => EvalSplit::All,
                    _ => return Err(bad_value(key, v)),
                }
            }
            "synth_subjects" => self.synth_subjects = parse_num(key, v)?,
            "synth_classes" => self.synth_classes = parse_num(key, v)?,
            "synth_trials" => self.synth_trials = parse_num(key, v)?,
            "synth_channels" => self.synth_channels = parse_num(key, v)?,
            "synth_timesteps" => self.synth_timesteps = parse_num(key, v)?,
            "synth_sessions" => self.synth_sessions = parse_num(key, v)?,
            "synth_snr" => self.synth_snr = parse_num(key, v)?,
            "synth_shift" => self.synth_shift = parse_num(key, v)?,
            "synth_task" => self.synth_task = TaskTag::parse(v).ok_or_else(|| bad_value(key, v))?,
            _ => {
                if DATA_KEYS.contains(&key) || !LatteConfig::KEYS.contains(&key) {
                    return Err(unknown(key));
                }
                // validate the value now so errors name the key early
                LatteConfig::default().set(key, v)?;
                self.model.insert(key.to_string(), v.to_string());
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "architecture" => match self.architecture {
                Architecture::Full => "full".into(),
                Architecture::Desk => "desk".into(),
            },
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => fmt_f64(self.lr),
            "weight_decay" => fmt_f64(self.weight_decay),
            "adapter_lr" => fmt_f64(self.adapter_lr),
            "seed" => self.seed.to_string(),
            "selection" => match self.selection {
                Choice::Auto => "auto".into(),
                Choice::Fixed(s) => s.name().into(),
            },
            "split" => match self.split {
                Choice::Auto => "auto".into(),
                Choice::Fixed(SplitKind::InstanceWise) => "instance_wise".into(),
                Choice::Fixed(SplitKind::SessionWise) => "session_wise".into(),
            },
            "pretrain_epochs" => self.pretrain_epochs.to_string(),
            "r" => fmt_f64(self.r),
            "l_min" => fmt_f64(self.l_min),
            "l_max" => fmt_f64(self.l_max),
            "fill" => match self.fill {
                Fill::ChannelMean => "mean".into(),
                Fill::Constant(v) => fmt_f64(v),
            },
            "finetune_epochs" => self.finetune_epochs.to_string(),
            "finetune_lr_scale" => fmt_f64(self.finetune_lr_scale),
            "strict" => self.strict.to_string(),
            "subject" => self.subject.map_or("all".into(), |s| s.to_string()),
            "eval_split" => match self.eval_split {
                EvalSplit::Train => "train".into(),
                EvalSplit::Val => "val".into(),
                EvalSplit::Test => "test".into(),
                EvalSplit::All => "all".into(),
            },
            "synth_subjects" => self.synth_subjects.to_string(),
            "synth_classes" => self.synth_classes.to_string(),
            "synth_trials" => self.synth_trials.to_string(),
            "synth_channels" => self.synth_channels.to_string(),
            "synth_timesteps" => self.synth_timesteps.to_string(),
            "synth_sessions" => self.synth_sessions.to_string(),
            "synth_snr" => fmt_f64(self.synth_snr),
            "synth_shift" => fmt_f64(self.synth_shift),
            "synth_task" => self.synth_task.name().into(),
            _ => return self.model.get(key).cloned(),
        })
    }

    /// Every run key, then the architecture keys that were set.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("known key"));
        }
        for (k, v) in &self.model {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies `key = value` text on top of the defaults; `architecture`
    /// is applied first wherever it appears.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_kv_lines(text)?)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs.iter().filter(|(k, _)| k == "architecture") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "architecture") {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Architecture for a dataset shape.
    pub fn model_config(&self, meta: &DatasetMeta) -> Result<LatteConfig> {
        let mut cfg = match self.architecture {
            Architecture::Desk => LatteConfig::desk(meta.channels, meta.timesteps, meta.classes),
            Architecture::Full => LatteConfig {
                channels: meta.channels,
                timesteps: meta.timesteps,
                classes: meta.classes,
                ..LatteConfig::default()
            },
        };
        for (k, v) in &self.model {
            cfg.set(k, v).map_err(|e| key_error(k, e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn optim(&self, lr_key: &str) -> Result<AdamWConfig> {
        for (k, v) in [
            (lr_key, self.lr),
            ("weight_decay", self.weight_decay),
            ("adapter_lr", self.adapter_lr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LatteError::InvalidArgument(format!(
                    "{k}: must be a non-negative number"
                )));
            }
        }
        Ok(AdamWConfig {
            lr: self.lr,
            adapter_lr: self.adapter_lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        })
    }

    pub fn selection_for(&self, meta: &DatasetMeta) -> Selection {
        match self.selection {
            Choice::Fixed(s) => s,
            Choice::Auto if meta.task == TaskTag::Ern => Selection::Auc,
            Choice::Auto => Selection::Accuracy,
        }
    }

    pub fn train_config(&self, meta: &DatasetMeta) -> Result<TrainConfig> {
        if self.batch_size == 0 {
            return Err(LatteError::InvalidArgument(
                "batch_size: must be at least 1".into(),
            ));
        }
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optim: self.optim("lr")?,
            seed: self.seed,
            selection: self.selection_for(meta),
        })
    }

    pub fn pretrain_config(&self, timesteps: usize) -> Result<PretrainConfig> {
        let cfg = PretrainConfig {
            r: self.r,
            l_min: self.l_min,
            l_max: self.l_max,
            fill: self.fill.clone(),
            epochs: self.pretrain_epochs,
            batch_size: self.batch_size,
            optim: self.optim("lr")?,
            seed: self.seed,
        };
        cfg.validate(timesteps)?;
        Ok(cfg)
    }

    pub fn finetune_config(&self) -> Result<FinetuneConfig> {
        if !(self.finetune_lr_scale >= 0.0 && self.finetune_lr_scale.is_finite()) {
            return Err(LatteError::InvalidArgument(
                "finetune_lr_scale: must be a non-negative number".into(),
            ));
        }
        Ok(FinetuneConfig {
            epochs: self.finetune_epochs,
            lr_scale: self.finetune_lr_scale,
            strict: self.strict,
        })
    }

    pub fn split_scheme(&self, meta: &DatasetMeta) -> SplitScheme {
        let kind = match self.split {
            Choice::Fixed(k) => k,
            Choice::Auto => match meta.task {
                TaskTag::Ssvep | TaskTag::Ern => SplitKind::SessionWise,
                TaskTag::Mi | TaskTag::Synthetic => SplitKind::InstanceWise,
            },
        };
        SplitScheme::new(kind)
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let mut spec = SynthSpec {
            subjects: self.synth_subjects,
            classes: self.synth_classes,
            trials_per_subject: self.synth_trials,
            channels: self.synth_channels,
            timesteps: self.synth_timesteps,
            sessions: self.synth_sessions,
            snr: self.synth_snr,
            shift: self.synth_shift,
            class_weights: None,
            task: self.synth_task,
            seed: self.seed,
        };
        if self.synth_task == TaskTag::Ern && self.synth_classes == 2 {
            spec.class_weights = SynthSpec::ern_like(self.seed).class_weights;
        }
        spec
    }
}
