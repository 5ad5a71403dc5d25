use std::rc::Rc;

use rand::Rng;

use super::{init, Ctx, Module};
use crate::autodiff::{Graph, Parameter, Tensor, Var, GATHER_ZERO};
use crate::error::{LatteError, Result};

/// Gather table turning `[seqs·len, ch]` into `[seqs·out_len, kernel·ch]`
/// windows (tap-major columns), zero outside each sequence.
pub fn unfold_index(
    seqs: usize,
    len: usize,
    ch: usize,
    kernel: usize,
    padding: usize,
) -> Result<(usize, Vec<u32>)> {
    let padded = len + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(LatteError::InvalidArgument(format!(
            "kernel {kernel} does not fit padded length {padded}"
        )));
    }
    let out_len = padded - kernel + 1;
    let mut idx = Vec::with_capacity(seqs * out_len * kernel * ch);
    for s in 0..seqs {
        for t in 0..out_len {
            for m in 0..kernel {
                let j = (t + m) as isize - padding as isize;
                for c in 0..ch {
                    if j >= 0 && (j as usize) < len {
                        idx.push(((s * len + j as usize) * ch + c) as u32);
                    } else {
                        idx.push(GATHER_ZERO);
                    }
                }
            }
        }
    }
    Ok((out_len, idx))
}

/// Sliding windows along each sequence; see [`unfold_index`].
pub fn unfold(
    g: &Graph,
    x: Var,
    seqs: usize,
    len: usize,
    kernel: usize,
    padding: usize,
) -> Result<(usize, Var)> {
    let (rows, ch) = g.shape(x);
    if rows != seqs * len {
        return Err(LatteError::Dimension(format!(
            "unfold input has {rows} rows, expected {seqs} x {len}"
        )));
    }
    let (out_len, idx) = unfold_index(seqs, len, ch, kernel, padding)?;
    Ok((
        out_len,
        g.gather(x, seqs * out_len, kernel * ch, Rc::new(idx)),
    ))
}

/// Temporal convolution over rows grouped into sequences.
#[derive(Clone, Debug)]
pub struct Conv1d {
    /// `out × (kernel · in)`.
    pub weight: Parameter,
    pub kernel: usize,
    pub padding: usize,
}

impl Conv1d {
    /// `padding = kernel / 2` keeps odd kernels length-preserving.
    pub fn same<R: Rng + ?Sized>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel;
        Self {
            weight: Parameter::new(
                format!("{name}.w"),
                init::uniform(rng, out_ch, fan_in, init::fan_in_bound(fan_in)),
            ),
            kernel,
            padding: kernel / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.cols() / self.kernel
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.rows()
    }

    /// Returns the output and its per-sequence length.
    pub fn forward(&self, g: &Graph, x: Var, seqs: usize, len: usize) -> Result<(usize, Var)> {
        let (_, ch) = g.shape(x);
        if ch != self.in_channels() {
            return Err(LatteError::Dimension(format!(
                "{}: expected {} channels, got {ch}",
                self.weight.name,
                self.in_channels()
            )));
        }
        let w = g.param(&self.weight);
        if self.kernel == 1 {
            return Ok((len, g.linear(x, w)));
        }
        let (out_len, cols) = unfold(g, x, seqs, len, self.kernel, self.padding)?;
        Ok((out_len, g.linear(cols, w)))
    }
}

impl Module for Conv1d {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-column batch normalization over rows.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    pub fn new(name: &str, features: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::filled(1, features, 1.0)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(1, features)),
            running_mean: Tensor::zeros(1, features),
            running_var: Tensor::filled(1, features, 1.0),
        }
    }

    pub fn forward(&self, g: &Graph, x: Var, ctx: &mut Ctx) -> Var {
        let (n, _) = g.shape(x);
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        let xhat = if ctx.train {
            let mean = g.scale(g.sum_rows(x), 1.0 / n as f64);
            let centered = g.sub(x, mean);
            let var = g.scale(g.sum_rows(g.square(centered)), 1.0 / n as f64);
            let mv = g.value(mean);
            let vv = g.value(var);
            let unbiased = if n > 1 {
                n as f64 / (n - 1) as f64
            } else {
                1.0
            };
            let new_mean = self
                .running_mean
                .zip_map(&mv, |r, m| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m);
            let new_var = self.running_var.zip_map(&vv, |r, v| {
                (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v * unbiased
            });
            ctx.record_stats(&self.name, new_mean, new_var);
            g.div(centered, g.sqrt(g.offset(var, BN_EPS)))
        } else {
            let mean = g.constant(self.running_mean.clone());
            let inv = g.constant(self.running_var.map(|v| 1.0 / (v + BN_EPS).sqrt()));
            g.mul(g.sub(x, mean), inv)
        };
        g.add(g.mul(xhat, gamma), beta)
    }
}

impl Module for BatchNorm {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.running_mean", self.name), &self.running_mean);
        f(&format!("{}.running_var", self.name), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(
            &format!("{}.running_mean", self.name),
            &mut self.running_mean,
        );
        f(&format!("{}.running_var", self.name), &mut self.running_var);
    }
}
