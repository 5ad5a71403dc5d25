use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{LatteError, Result};

/// One contiguous masked time span `[start, end)` per trial, covering every
/// channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CutMask {
    pub spans: Vec<(usize, usize)>,
    pub timesteps: usize,
    pub channels: usize,
}

impl CutMask {
    /// Binary mask in batch layout `[B·T, C]`.
    pub fn tensor(&self) -> Tensor {
        let t = self.timesteps;
        let mut m = Tensor::zeros(self.spans.len() * t, self.channels);
        for (b, &(s, e)) in self.spans.iter().enumerate() {
            for step in s..e {
                m.row_mut(b * t + step).fill(1.0);
            }
        }
        m
    }

    pub fn contains(&self, trial: usize, step: usize) -> bool {
        let (s, e) = self.spans[trial];
        (s..e).contains(&step)
    }

    /// Number of masked cells.
    pub fn cells(&self) -> usize {
        self.spans
            .iter()
            .map(|(s, e)| (e - s) * self.channels)
            .sum()
    }
}

/// Span length bounds `(⌊l_min·T⌋, ⌊l_max·T⌋)`.
pub(crate) fn span_bounds(t: usize, l_min: f64, l_max: f64) -> Result<(usize, usize)> {
    if !(l_min > 0.0 && l_min <= l_max && l_max <= 1.0) {
        return Err(LatteError::InvalidArgument(format!(
            "span fractions must satisfy 0 < l_min <= l_max <= 1, got {l_min} and {l_max}"
        )));
    }
    let lo = (l_min * t as f64).floor() as usize;
    let hi = (l_max * t as f64).floor() as usize;
    if lo < 1 {
        return Err(LatteError::InvalidArgument(format!(
            "l_min = {l_min} masks no sample of a {t}-step trial"
        )));
    }
    Ok((lo, hi))
}

/// Replaces one random contiguous span of each trial with `fill` (one value
/// per channel). `x` is `[B·T, C]`; for each trial the span length is drawn
/// uniformly from `⌊l_min·T⌋..=⌊l_max·T⌋`, then its start uniformly from
/// `0..=T − length`.
pub fn apply_cut_and_fill<R: Rng + ?Sized>(
    x: &Tensor,
    timesteps: usize,
    l_min: f64,
    l_max: f64,
    fill: &[f64],
    rng: &mut R,
) -> Result<(Tensor, CutMask)> {
    let (rows, c) = x.shape();
    if timesteps == 0 || rows % timesteps != 0 || fill.len() != c {
        return Err(LatteError::Dimension(format!(
            "cut-and-fill on {rows}x{c} with {timesteps} steps per trial and {} fill values",
            fill.len()
        )));
    }
    let (lo, hi) = span_bounds(timesteps, l_min, l_max)?;
    let b = rows / timesteps;
    let mut out = x.clone();
    let mut spans = Vec::with_capacity(b);
    for trial in 0..b {
        let len = rng.random_range(lo..=hi);
        let start = rng.random_range(0..=timesteps - len);
        for step in start..start + len {
            out.row_mut(trial * timesteps + step).copy_from_slice(fill);
        }
        spans.push((start, start + len));
    }
    Ok((
        out,
        CutMask {
            spans,
            timesteps,
            channels: c,
        },
    ))
}
