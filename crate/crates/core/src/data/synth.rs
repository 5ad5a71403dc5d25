use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, DatasetMeta, EegTrial, TaskTag};
use crate::error::{LatteError, Result};

/// Cycles of the class oscillation per trial.
const CYCLES: f64 = 4.0;

/// Parameters of the synthetic generator.
///
/// Channels are split into `classes` contiguous blocks; class `y` drives an
/// oscillation on block `y` with a fixed per-slot gain and phase, so classes
/// differ only in where the activity sits. Subject `i` (0-based) sees the
/// channels through `g_i((1 − shift)·I + shift·P_i)`, where `P_i` rotates the
/// channels by `i mod classes` blocks and `g_i = 1 + shift·u`, `u ~ U(−½, ½)`.
/// At `shift = 1` odd subjects of a two-class problem see the class blocks
/// swapped. Gaussian noise with standard deviation `1/√snr` is added to
/// every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub subjects: usize,
    pub classes: usize,
    pub trials_per_subject: usize,
    pub channels: usize,
    pub timesteps: usize,
    pub sessions: usize,
    pub snr: f64,
    pub shift: f64,
    /// Relative class frequencies; `None` balances the labels.
    pub class_weights: Option<Vec<f64>>,
    pub task: TaskTag,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects: 3,
            classes: 2,
            trials_per_subject: 200,
            channels: 8,
            timesteps: 128,
            sessions: 2,
            snr: 1.0,
            shift: 0.2,
            class_weights: None,
            task: TaskTag::Synthetic,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Two-class preset whose labels split 70/30.
    pub fn ern_like(seed: u64) -> Self {
        Self {
            class_weights: Some(vec![0.7, 0.3]),
            task: TaskTag::Ern,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("subjects", self.subjects),
            ("classes", self.classes),
            ("trials_per_subject", self.trials_per_subject),
            ("channels", self.channels),
            ("timesteps", self.timesteps),
            ("sessions", self.sessions),
        ] {
            if v == 0 {
                return Err(LatteError::InvalidArgument(format!(
                    "{name} must be at least 1"
                )));
            }
        }
        if self.classes > self.channels {
            return Err(LatteError::InvalidArgument(format!(
                "{} classes need at least as many channels, got {}",
                self.classes, self.channels
            )));
        }
        if !(self.snr > 0.0) {
            return Err(LatteError::InvalidArgument("snr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.shift) {
            return Err(LatteError::InvalidArgument(
                "shift must lie in [0, 1]".into(),
            ));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.classes || w.iter().any(|v| !(*v > 0.0)) {
                return Err(LatteError::InvalidArgument(
                    "class_weights needs one positive weight per class".into(),
                ));
            }
        }
        Ok(())
    }

    /// Label counts for one subject.
    fn label_counts(&self) -> Vec<usize> {
        let n = self.trials_per_subject;
        match &self.class_weights {
            None => (0..self.classes)
                .map(|y| n / self.classes + usize::from(y < n % self.classes))
                .collect(),
            Some(w) => {
                let total: f64 = w.iter().sum();
                let mut counts: Vec<usize> = w
                    .iter()
                    .map(|v| (v / total * n as f64).floor() as usize)
                    .collect();
                let mut left = n - counts.iter().sum::<usize>();
                for c in counts.iter_mut() {
                    if left == 0 {
                        break;
                    }
                    *c += 1;
                    left -= 1;
                }
                counts
            }
        }
    }

    fn block_of(&self, c: usize) -> usize {
        c * self.classes / self.channels
    }

    fn block_start(&self, y: usize) -> usize {
        (y * self.channels).div_ceil(self.classes)
    }
}

/// Noise-free class templates, `classes × (C·T)` channel-major.
fn templates(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (c, t) = (spec.channels, spec.timesteps);
    let slots = c.div_ceil(spec.classes);
    let gains: Vec<f64> = (0..slots).map(|_| rng.random_range(0.5..1.5)).collect();
    let phases: Vec<f64> = (0..slots).map(|_| rng.random_range(0.0..TAU)).collect();
    (0..spec.classes)
        .map(|y| {
            let mut x = vec![0.0; c * t];
            for ch in 0..c {
                if spec.block_of(ch) != y {
                    continue;
                }
                let slot = ch - spec.block_start(y);
                for step in 0..t {
                    let arg = TAU * CYCLES * step as f64 / t as f64 + phases[slot];
                    x[ch * t + step] = gains[slot] * arg.sin();
                }
            }
            x
        })
        .collect()
}

/// Generates a labelled multi-subject dataset; identical specs give
/// identical datasets.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let (c, t) = (spec.channels, spec.timesteps);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let templates = templates(spec, &mut rng);
    let sigma = if spec.snr.is_infinite() {
        0.0
    } else {
        1.0 / spec.snr.sqrt()
    };
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let counts = spec.label_counts();
    let block = c / spec.classes;

    let mut trials = Vec::with_capacity(spec.subjects * spec.trials_per_subject);
    for s in 0..spec.subjects {
        let gain = 1.0 + spec.shift * (rng.random::<f64>() - 0.5);
        let rotate = (s % spec.classes) * block;
        // Each output channel mixes its own source with the rotated one.
        let mixed: Vec<Vec<f64>> = templates
            .iter()
            .map(|tpl| {
                let mut x = vec![0.0; c * t];
                for ch in 0..c {
                    let src = (ch + c - rotate) % c;
                    for step in 0..t {
                        x[ch * t + step] = gain
                            * ((1.0 - spec.shift) * tpl[ch * t + step]
                                + spec.shift * tpl[src * t + step]);
                    }
                }
                x
            })
            .collect();
        let mut labels: Vec<u32> = counts
            .iter()
            .enumerate()
            .flat_map(|(y, &n)| std::iter::repeat_n(y as u32, n))
            .collect();
        labels.shuffle(&mut rng);
        let n = labels.len();
        for (i, label) in labels.into_iter().enumerate() {
            let base = &mixed[label as usize];
            let samples = base
                .iter()
                .map(|v| (v + sigma * noise.sample(&mut rng)) as f32)
                .collect();
            trials.push(EegTrial {
                samples,
                label,
                subject: s as u32,
                session: (i * spec.sessions / n) as u32,
            });
        }
    }
    Ok(Dataset {
        meta: DatasetMeta {
            channels: c,
            timesteps: t,
            classes: spec.classes,
            subjects: spec.subjects,
            sessions: spec.sessions,
            task: spec.task,
        },
        trials,
    })
}
