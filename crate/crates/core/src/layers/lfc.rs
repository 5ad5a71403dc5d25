use rand::Rng;

use super::{hyper, init, Module};
use crate::autodiff::{Graph, Parameter, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::geometry::Curvature;

/// Lorentz fully connected layer: `s' = W x_s + b`, then re-lift.
#[derive(Clone, Debug)]
pub struct LorentzFc {
    /// `out × in`.
    pub weight: Parameter,
    pub bias: Parameter,
    pub relu: bool,
}

impl LorentzFc {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Parameter::new(
                format!("{name}.w"),
                init::uniform(rng, out_dim, in_dim, init::fan_in_bound(in_dim)),
            ),
            bias: Parameter::new(format!("{name}.b"), Tensor::zeros(1, out_dim)),
            relu: false,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&self, g: &Graph, x: Var, k: Curvature) -> Result<Var> {
        let (_, c) = g.shape(x);
        if c != self.in_dim() + 1 {
            return Err(LatteError::Dimension(format!(
                "{}: expected {} space dims, got {}",
                self.weight.name,
                self.in_dim(),
                c.saturating_sub(1)
            )));
        }
        Ok(lorentz_fc(
            g,
            x,
            g.param(&self.weight),
            g.param(&self.bias),
            self.relu,
            k,
        ))
    }
}

/// Functional form of [`LorentzFc`].
pub fn lorentz_fc(g: &Graph, x: Var, w: Var, b: Var, relu: bool, k: Curvature) -> Var {
    let s = g.add(g.linear(hyper::space(g, x), w), b);
    let s = if relu { g.relu(s) } else { s };
    hyper::lift(g, s, k)
}

impl Module for LorentzFc {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
