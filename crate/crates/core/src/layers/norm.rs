use super::{hyper, Module};
use crate::autodiff::{Graph, Parameter, Tensor, Var};
use crate::geometry::Curvature;

pub const LN_EPS: f64 = 1e-5;

/// Normalizes each point's space components across features, applies an
/// affine map and re-lifts.
#[derive(Clone, Debug)]
pub struct TangentLayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

impl TangentLayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::filled(1, dim, 1.0)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(1, dim)),
        }
    }

    pub fn forward(&self, g: &Graph, x: Var, k: Curvature) -> Var {
        tangent_layernorm(g, x, g.param(&self.gamma), g.param(&self.beta), k)
    }
}

pub fn tangent_layernorm(g: &Graph, x: Var, gamma: Var, beta: Var, k: Curvature) -> Var {
    let s = hyper::space(g, x);
    let (_, d) = g.shape(s);
    let mean = g.scale(g.sum_cols(s), 1.0 / d as f64);
    let centered = g.sub(s, mean);
    let var = g.scale(g.sum_cols(g.square(centered)), 1.0 / d as f64);
    let normed = g.div(centered, g.sqrt(g.offset(var, LN_EPS)));
    hyper::lift(g, g.add(g.mul(normed, gamma), beta), k)
}

impl Module for TangentLayerNorm {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}
