use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;

use super::init;
use super::routing::{AdapterPolicy, SubjectRows};
use super::Module;
use crate::autodiff::{Graph, LrGroup, Parameter, RowMix, Tensor, Var};
use crate::error::{LatteError, Result};

/// How the `Q` factor of a fresh adapter is drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QInit {
    Normal {
        std: f64,
    },
    /// `U(−√(1/fan_in), √(1/fan_in))` of the shared matrix.
    FanInUniform,
}

/// Low-rank correction `scale · Q Rᵀ` to an `out × in` matrix.
#[derive(Clone, Debug)]
pub struct LoraFactors {
    /// `out × r`.
    pub q: Parameter,
    /// `in × r`, zero at initialization.
    pub r: Parameter,
    pub scale: f64,
}

impl LoraFactors {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        out_dim: usize,
        in_dim: usize,
        spec: &LoraSpec,
        rng: &mut R,
    ) -> Self {
        let LoraSpec {
            rank,
            scale,
            q_init,
            group,
        } = *spec;
        let q = match q_init {
            QInit::Normal { std } => init::normal(rng, out_dim, rank, std),
            QInit::FanInUniform => init::uniform(rng, out_dim, rank, init::fan_in_bound(in_dim)),
        };
        Self {
            q: Parameter::new(format!("{prefix}.q"), q).with_group(group),
            r: Parameter::new(format!("{prefix}.r"), Tensor::zeros(in_dim, rank)).with_group(group),
            scale,
        }
    }

    pub fn rank(&self) -> usize {
        self.q.value.cols()
    }

    /// Dense `scale · Q Rᵀ`.
    pub fn dense(&self) -> Tensor {
        self.q.value.matmul_t(&self.r.value).scale(self.scale)
    }

    /// `scale · (x R) Qᵀ` on the graph.
    pub fn apply(&self, g: &Graph, x: Var) -> Var {
        let q = g.param(&self.q);
        let r = g.param(&self.r);
        let down = g.matmul(x, r);
        let up = g.linear(down, q);
        if self.scale == 1.0 {
            up
        } else {
            g.scale(up, self.scale)
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.q);
        f(&self.r);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.q);
        f(&mut self.r);
    }
}

/// Per-subject adapters keyed by subject id.
#[derive(Clone, Debug, Default)]
pub struct LoraBank {
    pub adapters: BTreeMap<u32, LoraFactors>,
}

impl LoraBank {
    pub fn get(&self, subject: u32) -> Option<&LoraFactors> {
        self.adapters.get(&subject)
    }

    pub fn subjects(&self) -> impl Iterator<Item = u32> + '_ {
        self.adapters.keys().copied()
    }

    /// Sum over subject groups of the scattered adapter outputs, or `None`
    /// when no row receives a contribution.
    pub fn contribution(
        &self,
        g: &Graph,
        x: Var,
        routing: &SubjectRows,
        policy: AdapterPolicy,
    ) -> Result<Option<Var>> {
        if policy == AdapterPolicy::Off {
            return Ok(None);
        }
        let mut total: Option<Var> = None;
        for (subject, rows) in &routing.groups {
            let Some(factors) = self.adapters.get(subject) else {
                if policy == AdapterPolicy::Strict {
                    return Err(LatteError::UnknownSubject(*subject));
                }
                continue;
            };
            let part = if rows.len() == routing.rows {
                factors.apply(g, x)
            } else {
                let xs = g.select_rows(x, rows);
                let ys = factors.apply(g, xs);
                g.row_mix(ys, Rc::new(RowMix::scatter(rows, routing.rows)))
            };
            total = Some(match total {
                Some(t) => g.add(t, part),
                None => part,
            });
        }
        Ok(total)
    }
}

impl Module for LoraBank {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for a in self.adapters.values() {
            a.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for a in self.adapters.values_mut() {
            a.visit_mut(f);
        }
    }
}

/// Shared weight plus per-subject low-rank corrections:
/// row `x` of subject `s` maps to `(W + scale · Q_s R_sᵀ) x (+ b)`.
#[derive(Clone, Debug)]
pub struct LoraLinear {
    /// `out × in`.
    pub weight: Parameter,
    pub bias: Option<Parameter>,
    pub bank: LoraBank,
}

#[derive(Clone, Copy, Debug)]
pub struct LoraSpec {
    pub rank: usize,
    pub scale: f64,
    pub q_init: QInit,
    pub group: LrGroup,
}

impl LoraLinear {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        out_dim: usize,
        in_dim: usize,
        bias: bool,
        subjects: &[u32],
        spec: Option<LoraSpec>,
        rng: &mut R,
    ) -> Self {
        let weight = Parameter::new(
            format!("{prefix}.w"),
            init::uniform(rng, out_dim, in_dim, init::fan_in_bound(in_dim)),
        );
        let bias = bias.then(|| Parameter::new(format!("{prefix}.b"), Tensor::zeros(1, out_dim)));
        let mut bank = LoraBank::default();
        if let Some(spec) = spec {
            for &s in subjects {
                bank.adapters.insert(
                    s,
                    LoraFactors::new(&format!("{prefix}.lora.s{s}"), out_dim, in_dim, &spec, rng),
                );
            }
        }
        Self { weight, bias, bank }
    }

    pub fn forward(
        &self,
        g: &Graph,
        x: Var,
        routing: &SubjectRows,
        policy: AdapterPolicy,
    ) -> Result<Var> {
        let (rows, cols) = g.shape(x);
        if cols != self.weight.value.cols() {
            return Err(LatteError::Dimension(format!(
                "{}: expected {} input features, got {cols}",
                self.weight.name,
                self.weight.value.cols()
            )));
        }
        if rows != routing.rows {
            return Err(LatteError::Dimension(format!(
                "{}: {rows} rows but routing covers {}",
                self.weight.name, routing.rows
            )));
        }
        let w = g.param(&self.weight);
        let mut out = g.linear(x, w);
        if let Some(extra) = self.bank.contribution(g, x, routing, policy)? {
            out = g.add(out, extra);
        }
        if let Some(b) = &self.bias {
            out = g.add(out, g.param(b));
        }
        Ok(out)
    }
}

impl Module for LoraLinear {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
        self.bank.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
        self.bank.visit_mut(f);
    }
}
