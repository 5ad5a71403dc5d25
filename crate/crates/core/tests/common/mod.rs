#![allow(dead_code)]

use latte::autodiff::gradcheck::{compare, GradCheckReport, DEFAULT_STEP};
use latte::autodiff::{Graph, Tensor, Var};
use latte::data::{
    split_dataset, synth_generate, Dataset, SplitKind, SplitScheme, Splits, SynthSpec,
};
use latte::geometry::{lift_to_manifold, lorentz_inner, Curvature, LorentzPoint, TangentVector};
use latte::layers::{hyper, Module};
use latte::model::LatteConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn k(v: f64) -> Curvature {
    Curvature::new(v).unwrap()
}

pub fn gauss<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

pub fn point<R: Rng>(rng: &mut R, dim: usize, k: Curvature, scale: f64) -> LorentzPoint {
    lift_to_manifold(&gauss(rng, dim, scale), k).unwrap()
}

/// Random ambient vector projected onto the tangent space at `x`, rescaled
/// to a Lorentz norm drawn uniformly from `[0, scale·√dim)`.
pub fn tangent<R: Rng>(rng: &mut R, x: &LorentzPoint, k: Curvature, scale: f64) -> TangentVector {
    let u = gauss(rng, x.dim() + 1, 1.0);
    let c = lorentz_inner(&x.ambient(), &u).unwrap() / k.value();
    let v: Vec<f64> = u.iter().zip(x.ambient()).map(|(a, b)| a + c * b).collect();
    let norm = lorentz_inner(&v, &v).unwrap().max(0.0).sqrt();
    let target = scale * (x.dim() as f64).sqrt() * rng.random::<f64>();
    let f = if norm > 0.0 { target / norm } else { 0.0 };
    TangentVector {
        time: v[0] * f,
        space: v[1..].iter().map(|a| a * f).collect(),
        base: x.clone(),
    }
}

pub fn points<R: Rng>(
    rng: &mut R,
    n: usize,
    dim: usize,
    k: Curvature,
    scale: f64,
) -> Vec<LorentzPoint> {
    (0..n).map(|_| point(rng, dim, k, scale)).collect()
}

pub fn points_tensor<R: Rng>(
    rng: &mut R,
    n: usize,
    dim: usize,
    k: Curvature,
    scale: f64,
) -> Tensor {
    hyper::points_to_tensor(&points(rng, n, dim, k, scale))
}

pub fn random_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_vec(rows, cols, gauss(rng, rows * cols, scale))
}

fn set_entry<M: Module>(m: &mut M, name: &str, i: usize, v: f64) {
    m.visit_mut(&mut |p| {
        if p.name == name {
            p.value.data_mut()[i] = v;
        }
    });
}

/// Compares `for_param` gradients of a module's trainable parameters with
/// central differences on up to `per_param` evenly spaced entries each.
pub fn param_grad_check<M, F>(m: &M, f: F, per_param: usize, tol: f64) -> GradCheckReport
where
    M: Module + Clone,
    F: Fn(&Graph, &M) -> Var,
{
    let g = Graph::new();
    let loss = f(&g, m);
    let grads = g.backward(loss).unwrap();
    let mut entries: Vec<(String, usize, f64)> = Vec::new();
    m.visit(&mut |p| {
        if !p.trainable {
            return;
        }
        let n = p.value.len();
        let step = (n / per_param.max(1)).max(1);
        for i in (0..n).step_by(step).take(per_param) {
            entries.push((p.name.clone(), i, p.value.data()[i]));
        }
    });
    let value = |m: &M| {
        let g = Graph::new();
        let out = f(&g, m);
        g.value(out).item()
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = m.clone();
    for (name, i, v) in &entries {
        let a = grads.for_param(name).map_or(0.0, |t| t.data()[*i]);
        set_entry(&mut work, name, *i, v + DEFAULT_STEP);
        let up = value(&work);
        set_entry(&mut work, name, *i, v - DEFAULT_STEP);
        let down = value(&work);
        set_entry(&mut work, name, *i, *v);
        analytic.push(a);
        numeric.push((up - down) / (2.0 * DEFAULT_STEP));
    }
    let n = analytic.len();
    compare(
        &[Tensor::from_vec(1, n, analytic)],
        &[Tensor::from_vec(1, n, numeric)],
        tol,
    )
}

/// Weighted sum of all entries, a generic scalar probe for grad checks.
pub fn probe(g: &Graph, x: Var, seed: u64) -> Var {
    let (r, c) = g.shape(x);
    let mut rng = rng(seed);
    let w = g.constant(random_tensor(&mut rng, r, c, 1.0));
    g.sum_all(g.mul(x, w))
}

pub fn synth(shift: f64, snr: f64, seed: u64) -> Dataset {
    synth_generate(&SynthSpec {
        shift,
        snr,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn small_synth(seed: u64) -> Dataset {
    synth_generate(&SynthSpec {
        trials_per_subject: 24,
        timesteps: 32,
        channels: 4,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn instance_splits(ds: &Dataset, seed: u64) -> Splits {
    split_dataset(ds, &SplitScheme::new(SplitKind::InstanceWise), seed).unwrap()
}

/// Desk architecture for `ds`.
pub fn desk(ds: &Dataset) -> LatteConfig {
    LatteConfig::desk(ds.meta.channels, ds.meta.timesteps, ds.meta.classes)
}
