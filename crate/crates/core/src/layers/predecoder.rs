use rand::Rng;

use super::boost::BoostBank;
use super::lora::{LoraBank, LoraFactors, LoraSpec, QInit};
use super::routing::{AdapterPolicy, SubjectRows};
use super::{hyper, init, Module};
use crate::autodiff::{Graph, LrGroup, Parameter, Var};
use crate::error::{LatteError, Result};
use crate::geometry::Curvature;

/// Subject adapter flavour of the random projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredecoderAdapter {
    /// `α · Q Rᵀ` added to the frozen matrix.
    LowRank,
    /// A chain of Lorentz boosts after the frozen projection.
    Boost,
}

#[derive(Clone, Debug)]
pub struct PredecoderSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub rank: usize,
    pub alpha: f64,
    pub adapter: PredecoderAdapter,
    pub boosts: usize,
    pub boost_scale: f64,
}

/// Frozen random projection of the space components plus per-subject
/// adapters, followed by a re-lift.
#[derive(Clone, Debug)]
pub struct RandomProjection {
    /// `out × in`, never trained.
    pub weight: Parameter,
    pub lora: LoraBank,
    pub boosts: BoostBank,
    pub adapter: PredecoderAdapter,
}

impl RandomProjection {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        spec: &PredecoderSpec,
        subjects: Option<&[u32]>,
        rng: &mut R,
    ) -> Self {
        let weight = Parameter::frozen(
            format!("{name}.w"),
            init::uniform(
                rng,
                spec.out_dim,
                spec.in_dim,
                init::fan_in_bound(spec.in_dim),
            ),
        );
        let mut lora = LoraBank::default();
        let mut boosts = BoostBank::default();
        if let Some(subjects) = subjects {
            match spec.adapter {
                PredecoderAdapter::LowRank => {
                    let lspec = LoraSpec {
                        rank: spec.rank,
                        scale: spec.alpha,
                        q_init: QInit::FanInUniform,
                        group: LrGroup::DecoderAdapter,
                    };
                    for &s in subjects {
                        lora.adapters.insert(
                            s,
                            LoraFactors::new(
                                &format!("{name}.lora.s{s}"),
                                spec.out_dim,
                                spec.in_dim,
                                &lspec,
                                rng,
                            ),
                        );
                    }
                }
                PredecoderAdapter::Boost => {
                    boosts = BoostBank::new(
                        &format!("{name}.boost"),
                        subjects,
                        spec.out_dim,
                        spec.boosts,
                        spec.boost_scale,
                        LrGroup::DecoderAdapter,
                        rng,
                    );
                }
            }
        }
        Self {
            weight,
            lora,
            boosts,
            adapter: spec.adapter,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(
        &self,
        g: &Graph,
        x: Var,
        routing: &SubjectRows,
        policy: AdapterPolicy,
        k: Curvature,
    ) -> Result<Var> {
        let s = hyper::space(g, x);
        let (_, d) = g.shape(s);
        if d != self.weight.value.cols() {
            return Err(LatteError::Dimension(format!(
                "{}: expected {} space dims, got {d}",
                self.weight.name,
                self.weight.value.cols()
            )));
        }
        let mut y = g.linear(s, g.param(&self.weight));
        if self.adapter == PredecoderAdapter::LowRank {
            if let Some(extra) = self.lora.contribution(g, s, routing, policy)? {
                y = g.add(y, extra);
            }
        }
        let z = hyper::lift(g, y, k);
        match self.adapter {
            PredecoderAdapter::LowRank => Ok(z),
            PredecoderAdapter::Boost => self.boosts.forward(g, z, routing, policy),
        }
    }
}

impl Module for RandomProjection {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        self.lora.visit(f);
        self.boosts.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        self.lora.visit_mut(f);
        self.boosts.visit_mut(f);
    }
}
