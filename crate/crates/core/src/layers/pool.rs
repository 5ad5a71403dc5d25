use std::rc::Rc;

use super::hyper;
use crate::autodiff::{Graph, RowMix, Var};
use crate::error::{LatteError, Result};
use crate::geometry::{lorentz_centroid, Curvature, LorentzPoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    /// Keep the point farthest from the origin.
    Max,
    /// Uniform centroid of the window.
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolWindow {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl PoolWindow {
    pub fn new(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            dilation,
        }
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(LatteError::InvalidArgument(
                "pool kernel, stride and dilation must be positive".into(),
            ));
        }
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        if padded < span {
            return Err(LatteError::InvalidArgument(format!(
                "pool window spans {span} positions but padded length is {padded}"
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }

    /// In-range input positions of every output window.
    pub fn windows(&self, len: usize) -> Result<Vec<Vec<usize>>> {
        let out = self.output_len(len)?;
        let mut all = Vec::with_capacity(out);
        for o in 0..out {
            let start = (o * self.stride) as isize - self.padding as isize;
            let members: Vec<usize> = (0..self.kernel)
                .map(|m| start + (m * self.dilation) as isize)
                .filter(|&j| j >= 0 && (j as usize) < len)
                .map(|j| j as usize)
                .collect();
            if members.is_empty() {
                return Err(LatteError::InvalidArgument(format!(
                    "pool window {o} covers only padding"
                )));
            }
            all.push(members);
        }
        Ok(all)
    }
}

/// `acosh(x_t / √K)`, the geodesic radius of a point.
pub fn radius_score(time: f64, k: Curvature) -> f64 {
    (time / k.sqrt()).max(1.0).acosh()
}

/// First index of the largest score.
fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.enumerate() {
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Pools a single sequence of points.
pub fn hyper_pool_points(
    seq: &[LorentzPoint],
    window: PoolWindow,
    mode: PoolMode,
    k: Curvature,
) -> Result<Vec<LorentzPoint>> {
    window
        .windows(seq.len())?
        .into_iter()
        .map(|members| match mode {
            PoolMode::Max => {
                let i = argmax(members.iter().map(|&j| radius_score(seq[j].time, k)));
                Ok(seq[members[i]].clone())
            }
            PoolMode::Avg => {
                let pts: Vec<LorentzPoint> = members.iter().map(|&j| seq[j].clone()).collect();
                lorentz_centroid(&pts, &vec![1.0; pts.len()], k)
            }
        })
        .collect()
}

/// Pools `seqs` sequences of `len` consecutive rows each.
pub fn hyper_pool(
    g: &Graph,
    x: Var,
    seqs: usize,
    len: usize,
    window: PoolWindow,
    mode: PoolMode,
    k: Curvature,
) -> Result<Var> {
    let (rows, _) = g.shape(x);
    if rows != seqs * len {
        return Err(LatteError::Dimension(format!(
            "pool input has {rows} rows, expected {seqs} x {len}"
        )));
    }
    let windows = window.windows(len)?;
    let out_len = windows.len();
    let mut mix = RowMix::new(seqs * out_len);
    match mode {
        PoolMode::Max => {
            let xv = g.value(x);
            for s in 0..seqs {
                for (o, members) in windows.iter().enumerate() {
                    let i = argmax(
                        members
                            .iter()
                            .map(|&j| radius_score(xv.get(s * len + j, 0), k)),
                    );
                    mix.push(s * out_len + o, s * len + members[i], 1.0);
                }
            }
            Ok(g.row_mix(x, Rc::new(mix)))
        }
        PoolMode::Avg => {
            for s in 0..seqs {
                for (o, members) in windows.iter().enumerate() {
                    for &j in members {
                        mix.push(s * out_len + o, s * len + j, 1.0);
                    }
                }
            }
            if window.kernel == 1 {
                return Ok(g.row_mix(x, Rc::new(mix)));
            }
            Ok(hyper::centroid_mix(g, x, Rc::new(mix), k))
        }
    }
}
