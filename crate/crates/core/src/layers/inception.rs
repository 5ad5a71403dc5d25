use rand::Rng;

use super::conv::{BatchNorm, Conv1d};
use super::pool::{hyper_pool, PoolMode, PoolWindow};
use super::{hyper, Ctx, Module};
use crate::autodiff::{Graph, Parameter, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::geometry::Curvature;

/// Convolution, batch norm and ReLU on the space components along time,
/// followed by a re-lift of every timestep.
#[derive(Clone, Debug)]
pub struct HyperConv {
    pub conv: Conv1d,
    pub bn: BatchNorm,
}

impl HyperConv {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv1d::same(&format!("{name}.conv"), in_ch, out_ch, kernel, rng),
            bn: BatchNorm::new(&format!("{name}.bn"), out_ch),
        }
    }

    pub fn forward(
        &self,
        g: &Graph,
        x: Var,
        seqs: usize,
        len: usize,
        k: Curvature,
        ctx: &mut Ctx,
    ) -> Result<Var> {
        let s = hyper::space(g, x);
        let (out_len, y) = self.conv.forward(g, s, seqs, len)?;
        if out_len != len {
            return Err(LatteError::InvalidArgument(format!(
                "{}: even kernel {} changes the sequence length",
                self.conv.weight.name, self.conv.kernel
            )));
        }
        let y = g.relu(self.bn.forward(g, y, ctx));
        Ok(hyper::lift(g, y, k))
    }
}

impl Module for HyperConv {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.bn.visit_buffers(f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.bn.visit_buffers_mut(f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InceptionShape {
    pub in_dim: usize,
    pub bottleneck: usize,
    pub filters: usize,
    pub kernels: Vec<usize>,
}

impl InceptionShape {
    pub fn out_dim(&self) -> usize {
        self.filters * (self.kernels.len() + 1)
    }
}

/// Bottleneck, parallel kernel branches and a pooling branch, joined by
/// Lorentz concatenation.
#[derive(Clone, Debug)]
pub struct InceptionBlock {
    pub bottleneck: HyperConv,
    pub branches: Vec<HyperConv>,
    pub pool_proj: HyperConv,
    pub pool_window: PoolWindow,
    pub pool_mode: PoolMode,
}

impl InceptionBlock {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        shape: &InceptionShape,
        pool_mode: PoolMode,
        rng: &mut R,
    ) -> Result<Self> {
        if shape.in_dim < shape.bottleneck {
            return Err(LatteError::InvalidArgument(format!(
                "{name}: {} input dims is fewer than bottleneck {}",
                shape.in_dim, shape.bottleneck
            )));
        }
        if let Some(k) = shape.kernels.iter().find(|k| **k % 2 == 0) {
            return Err(LatteError::InvalidArgument(format!(
                "{name}: kernel {k} must be odd for length-preserving padding"
            )));
        }
        Ok(Self {
            bottleneck: HyperConv::new(
                &format!("{name}.bottleneck"),
                shape.in_dim,
                shape.bottleneck,
                1,
                rng,
            ),
            branches: shape
                .kernels
                .iter()
                .enumerate()
                .map(|(i, &ks)| {
                    HyperConv::new(
                        &format!("{name}.branch{i}"),
                        shape.bottleneck,
                        shape.filters,
                        ks,
                        rng,
                    )
                })
                .collect(),
            pool_proj: HyperConv::new(&format!("{name}.pool"), shape.in_dim, shape.filters, 1, rng),
            pool_window: PoolWindow::new(3, 1, 1, 1),
            pool_mode,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.branches.len() * self.branches[0].conv.out_channels()
            + self.pool_proj.conv.out_channels()
    }

    /// `x` holds `seqs` sequences of `len` points.
    pub fn forward(
        &self,
        g: &Graph,
        x: Var,
        seqs: usize,
        len: usize,
        k: Curvature,
        ctx: &mut Ctx,
    ) -> Result<Var> {
        let z0 = self.bottleneck.forward(g, x, seqs, len, k, ctx)?;
        let mut parts = Vec::with_capacity(self.branches.len() + 1);
        for b in &self.branches {
            parts.push(b.forward(g, z0, seqs, len, k, ctx)?);
        }
        let pooled = hyper_pool(g, x, seqs, len, self.pool_window, self.pool_mode, k)?;
        parts.push(self.pool_proj.forward(g, pooled, seqs, len, k, ctx)?);
        Ok(hyper::hcat(g, &parts, k))
    }

    /// Copies all weights and statistics from another block of equal shape,
    /// keeping this block's parameter names.
    pub fn load_from(&mut self, other: &InceptionBlock) -> Result<()> {
        let mut src: Vec<Tensor> = Vec::new();
        other.visit(&mut |p| src.push(p.value.clone()));
        let mut bufs: Vec<Tensor> = Vec::new();
        other.visit_buffers(&mut |_, t| bufs.push(t.clone()));
        let mut err = None;
        let mut i = 0;
        self.visit_mut(&mut |p| {
            match src.get(i) {
                Some(t) if t.shape() == p.value.shape() => p.value = t.clone(),
                _ => err = Some(p.name.clone()),
            }
            i += 1;
        });
        let mut j = 0;
        self.visit_buffers_mut(&mut |_, t| {
            if let Some(b) = bufs.get(j) {
                *t = b.clone();
            }
            j += 1;
        });
        match err {
            Some(name) => Err(LatteError::Dimension(format!(
                "cannot load inception weights into {name}"
            ))),
            None => Ok(()),
        }
    }
}

impl Module for InceptionBlock {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.bottleneck.visit(f);
        for b in &self.branches {
            b.visit(f);
        }
        self.pool_proj.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.bottleneck.visit_mut(f);
        for b in &mut self.branches {
            b.visit_mut(f);
        }
        self.pool_proj.visit_mut(f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.bottleneck.visit_buffers(f);
        for b in &self.branches {
            b.visit_buffers(f);
        }
        self.pool_proj.visit_buffers(f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.bottleneck.visit_buffers_mut(f);
        for b in &mut self.branches {
            b.visit_buffers_mut(f);
        }
        self.pool_proj.visit_buffers_mut(f);
    }
}
