use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;

use super::hyper;
use super::init;
use super::routing::{AdapterPolicy, SubjectRows};
use super::Module;
use crate::autodiff::{Graph, LrGroup, Parameter, RowMix, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::geometry::{lorentz_boost, LorentzPoint};

/// A chain of Lorentz boosts: boost `i` has direction `v_i / ‖v_i‖` and
/// rapidity `scale · μ_i`.
#[derive(Clone, Debug)]
pub struct BoostAdapter {
    /// `r × d`, one direction per row.
    pub directions: Parameter,
    /// `1 × r`, zero at initialization.
    pub magnitudes: Parameter,
    pub scale: f64,
}

impl BoostAdapter {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        dim: usize,
        boosts: usize,
        scale: f64,
        group: LrGroup,
        rng: &mut R,
    ) -> Self {
        let mut dirs = init::normal(rng, boosts, dim, 1.0);
        for r in 0..boosts {
            let n: f64 = dirs.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in dirs.row_mut(r) {
                *v /= n;
            }
        }
        Self {
            directions: Parameter::new(format!("{prefix}.v"), dirs).with_group(group),
            magnitudes: Parameter::new(format!("{prefix}.mu"), Tensor::zeros(1, boosts))
                .with_group(group),
            scale,
        }
    }

    pub fn boosts(&self) -> usize {
        self.directions.value.rows()
    }

    fn check_directions(&self) -> Result<()> {
        for r in 0..self.boosts() {
            let n: f64 = self.directions.value.row(r).iter().map(|v| v * v).sum();
            if n == 0.0 || !n.is_finite() {
                return Err(LatteError::InvalidArgument(format!(
                    "{}: boost direction {r} has norm {}",
                    self.directions.name,
                    n.sqrt()
                )));
            }
        }
        Ok(())
    }

    /// Applies the boosts in order to a batch of points.
    pub fn apply(&self, g: &Graph, x: Var) -> Result<Var> {
        self.check_directions()?;
        let dirs = g.param(&self.directions);
        let mags = g.param(&self.magnitudes);
        let mut h = x;
        for i in 0..self.boosts() {
            let v = g.select_rows(dirs, &[i]);
            let unit = g.div(v, g.sqrt(hyper::sq_norm(g, v)));
            let xi = g.scale(g.slice_cols(mags, i, i + 1), self.scale);
            h = hyper::boost_rows(g, h, unit, xi);
        }
        Ok(h)
    }

    /// The same chain on a single point, without the graph.
    pub fn apply_point(&self, x: &LorentzPoint) -> Result<LorentzPoint> {
        self.check_directions()?;
        let mut h = x.clone();
        for i in 0..self.boosts() {
            let v = self.directions.value.row(i);
            let n: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let unit: Vec<f64> = v.iter().map(|a| a / n).collect();
            let xi = self.scale * self.magnitudes.value.get(0, i);
            h = lorentz_boost(&h, &unit, xi)?;
        }
        Ok(h)
    }
}

/// Boost adapters keyed by subject id.
#[derive(Clone, Debug, Default)]
pub struct BoostBank {
    pub adapters: BTreeMap<u32, BoostAdapter>,
}

impl BoostBank {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        subjects: &[u32],
        dim: usize,
        boosts: usize,
        scale: f64,
        group: LrGroup,
        rng: &mut R,
    ) -> Self {
        let adapters = subjects
            .iter()
            .map(|&s| {
                (
                    s,
                    BoostAdapter::new(&format!("{prefix}.s{s}"), dim, boosts, scale, group, rng),
                )
            })
            .collect();
        Self { adapters }
    }

    /// Boosts each subject's rows with its own chain; other rows pass through.
    pub fn forward(
        &self,
        g: &Graph,
        x: Var,
        routing: &SubjectRows,
        policy: AdapterPolicy,
    ) -> Result<Var> {
        if policy == AdapterPolicy::Off {
            return Ok(x);
        }
        let mut pieces: Vec<(Vec<usize>, Var)> = Vec::new();
        let mut untouched: Vec<usize> = Vec::new();
        for (subject, rows) in &routing.groups {
            match self.adapters.get(subject) {
                Some(a) => {
                    if rows.len() == routing.rows {
                        return a.apply(g, x);
                    }
                    let xs = g.select_rows(x, rows);
                    pieces.push((rows.clone(), a.apply(g, xs)?));
                }
                None if policy == AdapterPolicy::Strict => {
                    return Err(LatteError::UnknownSubject(*subject))
                }
                None => untouched.extend_from_slice(rows),
            }
        }
        if pieces.is_empty() {
            return Ok(x);
        }
        if !untouched.is_empty() {
            untouched.sort_unstable();
            let xs = g.select_rows(x, &untouched);
            pieces.push((untouched, xs));
        }
        let mut out: Option<Var> = None;
        for (rows, v) in pieces {
            let placed = g.row_mix(v, Rc::new(RowMix::scatter(&rows, routing.rows)));
            out = Some(match out {
                Some(o) => g.add(o, placed),
                None => placed,
            });
        }
        Ok(out.expect("at least one piece"))
    }
}

impl Module for BoostBank {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for a in self.adapters.values() {
            f(&a.directions);
            f(&a.magnitudes);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for a in self.adapters.values_mut() {
            f(&mut a.directions);
            f(&mut a.magnitudes);
        }
    }
}
