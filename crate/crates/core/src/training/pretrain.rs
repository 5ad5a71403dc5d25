use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cutfill::{apply_cut_and_fill, span_bounds};
use super::losses::{cutfill_loss, reconstruction_loss};
use crate::autodiff::{AdamW, AdamWConfig, Graph};
use crate::data::Dataset;
use crate::error::{LatteError, Result};
use crate::layers::{Ctx, Module};
use crate::model::{LatteModel, PretrainDecoder};

/// Value written into cut spans.
#[derive(Clone, Debug, PartialEq)]
pub enum Fill {
    /// Per-channel mean of the pretraining trials.
    ChannelMean,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    /// Probability that a step is a reconstruction step.
    pub r: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub fill: Fill,
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            r: 0.5,
            l_min: 0.1,
            l_max: 0.3,
            fill: Fill::ChannelMean,
            epochs: 50,
            batch_size: 32,
            optim: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self, timesteps: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(LatteError::InvalidArgument(format!(
                "r must lie in [0, 1], got {}",
                self.r
            )));
        }
        if self.batch_size == 0 {
            return Err(LatteError::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        span_bounds(timesteps, self.l_min, self.l_max).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Reconstruction,
    CutAndFill,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: LatteModel,
    pub decoder: PretrainDecoder,
    /// Kind of every optimization step, in order.
    pub steps: Vec<StepKind>,
    /// Inference-mode reconstruction error before training and after each
    /// epoch.
    pub reconstruction: Vec<f64>,
}

/// Inference-mode mean squared reconstruction error over `indices`.
pub fn reconstruction_error(
    model: &LatteModel,
    decoder: &PretrainDecoder,
    ds: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(LatteError::InvalidArgument(
            "reconstruction set is empty".into(),
        ));
    }
    let mut total = 0.0;
    for chunk in indices.chunks(64) {
        let batch = ds.batch(chunk);
        let g = Graph::new();
        let x = g.constant(batch.x);
        let mut ctx = Ctx::eval();
        let tokens = model.encode_pretrain(&g, x, &batch.subjects, &mut ctx)?;
        let recon = decoder.forward(&g, tokens, chunk.len(), model.curvature)?;
        let loss = reconstruction_loss(&g, recon, x)?;
        total += g.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

/// Self-supervised pretraining of the processor and the max-pool inception
/// block. Each step is a reconstruction step with probability `r` and a
/// cut-and-fill step otherwise.
pub fn pretrain(
    mut model: LatteModel,
    mut decoder: PretrainDecoder,
    ds: &Dataset,
    indices: &[usize],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    let t = model.config.timesteps;
    cfg.validate(t)?;
    if indices.is_empty() {
        return Err(LatteError::InvalidArgument(
            "pretraining set is empty".into(),
        ));
    }
    let fill = match cfg.fill {
        Fill::ChannelMean => ds
            .with_trials(indices.iter().map(|&i| ds.trials[i].clone()).collect())
            .channel_means(),
        Fill::Constant(v) => vec![v; ds.meta.channels],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.optim.clone());
    let mut order = indices.to_vec();
    let mut steps = Vec::new();
    let mut reconstruction = vec![reconstruction_error(&model, &decoder, ds, indices)?];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = ds.batch(chunk);
            let kind = if rng.random::<f64>() < cfg.r {
                StepKind::Reconstruction
            } else {
                StepKind::CutAndFill
            };
            let g = Graph::new();
            let target = g.constant(batch.x.clone());
            let (input, mask) = match kind {
                StepKind::Reconstruction => (target, None),
                StepKind::CutAndFill => {
                    let (masked, mask) =
                        apply_cut_and_fill(&batch.x, t, cfg.l_min, cfg.l_max, &fill, &mut rng)?;
                    (g.constant(masked), Some(mask.tensor()))
                }
            };
            let mut ctx = Ctx::train();
            let tokens = model.encode_pretrain(&g, input, &batch.subjects, &mut ctx)?;
            let recon = decoder.forward(&g, tokens, chunk.len(), model.curvature)?;
            let loss = match &mask {
                None => reconstruction_loss(&g, recon, target)?,
                Some(m) => cutfill_loss(&g, recon, target, m)?,
            };
            let grads = g.backward(loss)?;
            model.visit_mut(&mut |p| {
                grads.accumulate([&mut *p]);
                opt.step([p]);
            });
            decoder.visit_mut(&mut |p| {
                grads.accumulate([&mut *p]);
                opt.step([p]);
            });
            ctx.commit(&mut model);
            steps.push(kind);
        }
        reconstruction.push(reconstruction_error(&model, &decoder, ds, indices)?);
    }
    Ok(PretrainOutcome {
        model,
        decoder,
        steps,
        reconstruction,
    })
}
