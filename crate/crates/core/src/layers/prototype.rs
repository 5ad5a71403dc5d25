use rand::Rng;

use super::{hyper, Module};
use crate::autodiff::{Graph, Parameter, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::geometry::{squared_lorentz_distance, wrapped_normal_sample, Curvature, LorentzPoint};

/// One embedded center per class, stored by space components.
#[derive(Clone, Debug)]
pub struct PrototypeSet {
    /// `classes × d`.
    pub space: Parameter,
}

impl PrototypeSet {
    pub fn wrapped_normal<R: Rng + ?Sized>(
        name: &str,
        classes: usize,
        dim: usize,
        std: f64,
        trainable: bool,
        k: Curvature,
        rng: &mut R,
    ) -> Self {
        let mut data = Vec::with_capacity(classes * dim);
        for _ in 0..classes {
            data.extend(wrapped_normal_sample(std, k, dim, rng).space);
        }
        let t = Tensor::from_vec(classes, dim, data);
        let space = if trainable {
            Parameter::new(name, t)
        } else {
            Parameter::frozen(name, t)
        };
        Self { space }
    }

    pub fn classes(&self) -> usize {
        self.space.value.rows()
    }

    pub fn points(&self, k: Curvature) -> Vec<LorentzPoint> {
        (0..self.classes())
            .map(|c| {
                crate::geometry::lift_to_manifold(self.space.value.row(c), k)
                    .expect("finite prototypes")
            })
            .collect()
    }

    /// `[n, classes]` logits `−d²_L(z_i, p_c) = 2K + 2⟨z_i, p_c⟩_L`.
    pub fn logits(&self, g: &Graph, z: Var, k: Curvature) -> Result<Var> {
        let (_, c) = g.shape(z);
        if c != self.space.value.cols() + 1 {
            return Err(LatteError::Dimension(format!(
                "prototypes live in {} space dims, input has {}",
                self.space.value.cols(),
                c.saturating_sub(1)
            )));
        }
        let protos = hyper::lift(g, g.param(&self.space), k);
        Ok(g.scale(hyper::sq_dist_pairs(g, z, protos, k), -1.0))
    }
}

/// Negative squared distances to each prototype.
pub fn prototype_logits(
    z: &LorentzPoint,
    protos: &[LorentzPoint],
    k: Curvature,
) -> Result<Vec<f64>> {
    protos
        .iter()
        .map(|p| squared_lorentz_distance(z, p, k).map(|d| -d))
        .collect()
}

/// Index of the largest logit; ties go to the lowest index.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

impl Module for PrototypeSet {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.space);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.space);
    }
}
