//! Trial containers, the `EEGC` file format, a synthetic multi-subject
//! generator and train/validation/test splitting.

mod eegc;
mod split;
mod synth;

pub use eegc::{load_eegc, read_eegc, save_eegc, write_eegc, MAGIC, VERSION};
pub use split::{split_dataset, SplitKind, SplitScheme, Splits};
pub use synth::{synth_generate, SynthSpec};

use crate::autodiff::Tensor;
use crate::error::{LatteError, Result};
use crate::model::Batch;

/// Recording paradigm of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskTag {
    Mi,
    Ssvep,
    Ern,
    Synthetic,
}

impl TaskTag {
    pub fn code(self) -> u32 {
        match self {
            TaskTag::Mi => 0,
            TaskTag::Ssvep => 1,
            TaskTag::Ern => 2,
            TaskTag::Synthetic => 3,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            0 => TaskTag::Mi,
            1 => TaskTag::Ssvep,
            2 => TaskTag::Ern,
            3 => TaskTag::Synthetic,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskTag::Mi => "mi",
            TaskTag::Ssvep => "ssvep",
            TaskTag::Ern => "ern",
            TaskTag::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            TaskTag::Mi,
            TaskTag::Ssvep,
            TaskTag::Ern,
            TaskTag::Synthetic,
        ]
        .into_iter()
        .find(|t| t.name() == s)
    }
}

/// One recorded trial. `samples` is `C × T`, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EegTrial {
    pub samples: Vec<f32>,
    pub label: u32,
    pub subject: u32,
    pub session: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub channels: usize,
    pub timesteps: usize,
    pub classes: usize,
    pub subjects: usize,
    /// Sessions recorded per subject.
    pub sessions: usize,
    pub task: TaskTag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub trials: Vec<EegTrial>,
}

impl Dataset {
    /// Checks every trial against the metadata.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        let cells = m.channels * m.timesteps;
        for (i, t) in self.trials.iter().enumerate() {
            if t.samples.len() != cells {
                return Err(LatteError::Dimension(format!(
                    "trial {i} has {} samples, expected {cells}",
                    t.samples.len()
                )));
            }
            if t.label as usize >= m.classes {
                return Err(LatteError::InvalidArgument(format!(
                    "trial {i} has label {} but there are {} classes",
                    t.label, m.classes
                )));
            }
            if !t.samples.iter().all(|v| v.is_finite()) {
                return Err(LatteError::NonFinite(format!("trial {i}")));
            }
        }
        Ok(())
    }

    /// Distinct subject ids, ascending.
    pub fn subject_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.trials.iter().map(|t| t.subject).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn with_trials(&self, trials: Vec<EegTrial>) -> Dataset {
        Dataset {
            meta: self.meta.clone(),
            trials,
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&EegTrial) -> bool) -> Dataset {
        self.with_trials(self.trials.iter().filter(|t| keep(t)).cloned().collect())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.label as usize).collect()
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .map(|&i| self.trials[i].label as usize)
            .collect()
    }

    /// Per-channel mean over all samples of all trials.
    pub fn channel_means(&self) -> Vec<f64> {
        let (c, t) = (self.meta.channels, self.meta.timesteps);
        let mut sums = vec![0.0; c];
        for trial in &self.trials {
            for (ch, s) in sums.iter_mut().enumerate() {
                *s += trial.samples[ch * t..(ch + 1) * t]
                    .iter()
                    .map(|&v| f64::from(v))
                    .sum::<f64>();
            }
        }
        let n = (self.trials.len() * t).max(1) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    /// Stacks the given trials into a model batch (`[B·T, C]`, time-major).
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let (c, t) = (self.meta.channels, self.meta.timesteps);
        let mut x = Tensor::zeros(indices.len() * t, c);
        for (b, &i) in indices.iter().enumerate() {
            let trial = &self.trials[i];
            for ch in 0..c {
                for step in 0..t {
                    x.set(b * t + step, ch, f64::from(trial.samples[ch * t + step]));
                }
            }
        }
        Batch {
            x,
            subjects: indices.iter().map(|&i| self.trials[i].subject).collect(),
            labels: indices
                .iter()
                .map(|&i| self.trials[i].label as usize)
                .collect(),
        }
    }
}

/// Shape and protocol of one of the public benchmark datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetPreset {
    pub task: TaskTag,
    pub channels: usize,
    pub timesteps: usize,
    pub subjects: usize,
    pub classes: usize,
    pub split: SplitKind,
}

/// Motor imagery: 22 channels, 438 samples, 9 subjects, 4 classes.
pub const MI: DatasetPreset = DatasetPreset {
    task: TaskTag::Mi,
    channels: 22,
    timesteps: 438,
    subjects: 9,
    classes: 4,
    split: SplitKind::InstanceWise,
};

/// Steady-state visual evoked potentials: 8 × 128, 11 subjects, 5 classes.
pub const SSVEP: DatasetPreset = DatasetPreset {
    task: TaskTag::Ssvep,
    channels: 8,
    timesteps: 128,
    subjects: 11,
    classes: 5,
    split: SplitKind::SessionWise,
};

/// Error-related negativity: 56 × 160, 16 subjects, 2 classes.
pub const ERN: DatasetPreset = DatasetPreset {
    task: TaskTag::Ern,
    channels: 56,
    timesteps: 160,
    subjects: 16,
    classes: 2,
    split: SplitKind::SessionWise,
};

pub fn preset(task: TaskTag) -> Option<DatasetPreset> {
    match task {
        TaskTag::Mi => Some(MI),
        TaskTag::Ssvep => Some(SSVEP),
        TaskTag::Ern => Some(ERN),
        TaskTag::Synthetic => None,
    }
}
