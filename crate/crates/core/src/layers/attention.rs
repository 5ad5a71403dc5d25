use rand::Rng;

use super::lfc::LorentzFc;
use super::{hyper, Module};
use crate::autodiff::{Graph, Parameter, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::geometry::Curvature;

/// Multi-head attention whose weights are a softmax of negative scaled
/// squared Lorentz distances and whose aggregation is the weighted centroid.
#[derive(Clone, Debug)]
pub struct LorentzAttention {
    pub q: LorentzFc,
    pub k: LorentzFc,
    pub v: LorentzFc,
    pub out: LorentzFc,
    /// `λ = exp(log_lambda)`, initialized to 1.
    pub log_lambda: Parameter,
    pub heads: usize,
}

impl LorentzAttention {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        dim: usize,
        inner: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !inner.is_multiple_of(heads) {
            return Err(LatteError::InvalidArgument(format!(
                "{name}: {heads} heads do not divide {inner} dims"
            )));
        }
        Ok(Self {
            q: LorentzFc::new(&format!("{name}.q"), dim, inner, rng),
            k: LorentzFc::new(&format!("{name}.k"), dim, inner, rng),
            v: LorentzFc::new(&format!("{name}.v"), dim, inner, rng),
            out: LorentzFc::new(&format!("{name}.o"), inner, dim, rng),
            log_lambda: Parameter::new(format!("{name}.log_lambda"), Tensor::scalar(0.0)),
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.q.out_dim() / self.heads
    }

    /// `x` holds `groups` independent sequences of `tokens` points each.
    /// Returns the output tokens and, per head, the `[groups·tokens, tokens]`
    /// attention weights.
    pub fn forward_with_weights(
        &self,
        g: &Graph,
        x: Var,
        groups: usize,
        tokens: usize,
        k: Curvature,
    ) -> Result<(Var, Vec<Var>)> {
        let (rows, _) = g.shape(x);
        if rows != groups * tokens {
            return Err(LatteError::Dimension(format!(
                "attention input has {rows} rows, expected {groups} x {tokens}"
            )));
        }
        let q = hyper::space(g, self.q.forward(g, x, k)?);
        let kk = hyper::space(g, self.k.forward(g, x, k)?);
        let v = hyper::space(g, self.v.forward(g, x, k)?);
        let dh = self.head_dim();
        let lambda = g.exp(g.param(&self.log_lambda));
        let coef = g.scale(lambda, -1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let span = h * dh..(h + 1) * dh;
            let qh = hyper::lift(g, g.slice_cols(q, span.start, span.end), k);
            let kh = hyper::lift(g, g.slice_cols(kk, span.start, span.end), k);
            let vh = hyper::lift(g, g.slice_cols(v, span.start, span.end), k);
            let inner = g.group_matmul_t(hyper::time_flip(g, qh), kh, groups);
            let sq = g.offset(g.scale(inner, -2.0), -2.0 * k.value());
            let alpha = g.softmax_rows(g.mul(sq, coef));
            let sum = g.group_matmul(alpha, vh, groups);
            heads.push(hyper::normalize_rows(g, sum, k));
            weights.push(alpha);
        }
        let joined = hyper::hcat(g, &heads, k);
        Ok((self.out.forward(g, joined, k)?, weights))
    }

    pub fn forward(
        &self,
        g: &Graph,
        x: Var,
        groups: usize,
        tokens: usize,
        k: Curvature,
    ) -> Result<Var> {
        Ok(self.forward_with_weights(g, x, groups, tokens, k)?.0)
    }
}

impl Module for LorentzAttention {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.q.visit(f);
        self.k.visit(f);
        self.v.visit(f);
        self.out.visit(f);
        f(&self.log_lambda);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.q.visit_mut(f);
        self.k.visit_mut(f);
        self.v.visit_mut(f);
        self.out.visit_mut(f);
        f(&mut self.log_lambda);
    }
}
