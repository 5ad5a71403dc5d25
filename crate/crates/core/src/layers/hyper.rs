//! Differentiable hyperboloid primitives on batched points.
//!
//! A batch of points is one graph node of shape `[n, 1 + d]`: column 0 holds
//! the time component, the remaining `d` columns the space components.
//! Tangent vectors at the origin have zero time and are carried as their
//! `[n, d]` space part only.

use std::rc::Rc;

use crate::autodiff::{Graph, RowMix, Tensor, Var};
use crate::geometry::{Curvature, LorentzPoint};

/// Stacks points into a `[n, 1 + d]` tensor.
pub fn points_to_tensor(points: &[LorentzPoint]) -> Tensor {
    let d = points.first().map_or(0, |p| p.dim());
    let mut data = Vec::with_capacity(points.len() * (d + 1));
    for p in points {
        assert_eq!(p.dim(), d, "points of differing dimension");
        data.push(p.time);
        data.extend_from_slice(&p.space);
    }
    Tensor::from_vec(points.len(), d + 1, data)
}

pub fn tensor_to_points(t: &Tensor) -> Vec<LorentzPoint> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            LorentzPoint {
                time: row[0],
                space: row[1..].to_vec(),
            }
        })
        .collect()
}

/// Largest `|⟨x, x⟩_L + K|` over the rows of a point batch.
pub fn max_residual(t: &Tensor, k: Curvature) -> f64 {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let sq: f64 = row[1..].iter().map(|v| v * v).sum();
            (sq - row[0] * row[0] + k.value()).abs()
        })
        .fold(0.0, f64::max)
}

pub fn space(g: &Graph, x: Var) -> Var {
    let (_, c) = g.shape(x);
    g.slice_cols(x, 1, c)
}

pub fn time(g: &Graph, x: Var) -> Var {
    g.slice_cols(x, 0, 1)
}

/// Row-wise `‖s‖²`, `[n, d] -> [n, 1]`.
pub fn sq_norm(g: &Graph, s: Var) -> Var {
    g.sum_cols(g.square(s))
}

/// Attaches `t = √(K + ‖s‖²)` to each row of a space batch.
pub fn lift(g: &Graph, s: Var, k: Curvature) -> Var {
    let t = g.sqrt(g.offset(sq_norm(g, s), k.value()));
    g.concat_cols(&[t, s])
}

fn minkowski_sign(g: &Graph, cols: usize) -> Var {
    let mut sign = vec![1.0; cols];
    sign[0] = -1.0;
    g.constant(Tensor::row_vector(&sign))
}

/// Flips the time column so a plain dot product becomes the Lorentz inner
/// product.
pub fn time_flip(g: &Graph, x: Var) -> Var {
    let (_, c) = g.shape(x);
    g.mul(x, minkowski_sign(g, c))
}

/// Row-wise `⟨x_i, y_i⟩_L`, `[n, 1]`.
pub fn inner_rows(g: &Graph, x: Var, y: Var) -> Var {
    g.sum_cols(g.mul(time_flip(g, x), y))
}

/// Row-wise `−2K − 2⟨x_i, y_i⟩_L`.
pub fn sq_dist_rows(g: &Graph, x: Var, y: Var, k: Curvature) -> Var {
    g.offset(g.scale(inner_rows(g, x, y), -2.0), -2.0 * k.value())
}

/// All-pairs `−2K − 2⟨x_i, y_j⟩_L`, `[n, m]`.
pub fn sq_dist_pairs(g: &Graph, x: Var, y: Var, k: Curvature) -> Var {
    let inner = g.linear(time_flip(g, x), y);
    g.offset(g.scale(inner, -2.0), -2.0 * k.value())
}

/// Row-wise geodesic distance `√K · acosh(max(1, −⟨x, y⟩_L / K))`.
pub fn dist_rows(g: &Graph, x: Var, y: Var, k: Curvature) -> Var {
    let arg = g.scale(inner_rows(g, x, y), -1.0 / k.value());
    g.scale(g.acosh_clamped(arg), k.sqrt())
}

/// Logarithmic map at the origin, returning the space part of the tangent.
///
/// `log_o(x)_s = asinh(‖x_s‖/√K) · √K / ‖x_s‖ · x_s`, written through
/// `asinh(√u)/√u` with `u = ‖x_s‖²/K` so it stays smooth at the origin.
pub fn log_origin(g: &Graph, x: Var, k: Curvature) -> Var {
    let s = space(g, x);
    let u = g.scale(sq_norm(g, s), 1.0 / k.value());
    g.mul(s, g.asinhc_sq(u))
}

/// Exponential map at the origin of a tangent given by its space part.
pub fn exp_origin(g: &Graph, z: Var, k: Curvature) -> Var {
    let u = g.scale(sq_norm(g, z), 1.0 / k.value());
    let s = g.mul(z, g.sinhc_sq(u));
    lift(g, s, k)
}

/// Rescales each row of an ambient sum `Σ ν_i x_i` back onto the manifold.
pub fn normalize_rows(g: &Graph, sum: Var, k: Curvature) -> Var {
    let q = g.abs(inner_rows(g, sum, sum));
    let inv = g.scale(g.recip(g.sqrt(q)), k.sqrt());
    g.mul(sum, inv)
}

/// Centroid of fixed groups of rows with constant nonnegative weights.
pub fn centroid_mix(g: &Graph, x: Var, mix: Rc<RowMix>, k: Curvature) -> Var {
    let sum = g.row_mix(x, mix);
    normalize_rows(g, sum, k)
}

/// Uniform centroid of consecutive runs of `group` rows.
pub fn centroid_groups(g: &Graph, x: Var, group: usize, k: Curvature) -> Var {
    let (n, _) = g.shape(x);
    assert!(
        group > 0 && n % group == 0,
        "rows not divisible into groups"
    );
    if group == 1 {
        return x;
    }
    let mut mix = RowMix::new(n / group);
    for r in 0..n {
        mix.push(r / group, r, 1.0);
    }
    centroid_mix(g, x, Rc::new(mix), k)
}

/// Concatenates the space parts of several point batches and re-lifts.
pub fn hcat(g: &Graph, parts: &[Var], k: Curvature) -> Var {
    if parts.len() == 1 {
        return parts[0];
    }
    let spaces: Vec<Var> = parts.iter().map(|p| space(g, *p)).collect();
    lift(g, g.concat_cols(&spaces), k)
}

/// Lorentz boost of every row along unit direction `v: [1, d]` with
/// rapidity `xi: [1, 1]`.
pub fn boost_rows(g: &Graph, x: Var, v: Var, xi: Var) -> Var {
    let t = time(g, x);
    let s = space(g, x);
    let sv = g.sum_cols(g.mul(s, v));
    let ch = g.cosh(xi);
    let sh = g.sinh(xi);
    let t_new = g.add(g.mul(t, ch), g.mul(sv, sh));
    let shift = g.add(g.mul(sv, g.offset(ch, -1.0)), g.mul(t, sh));
    let s_new = g.add(s, g.matmul(shift, v));
    g.concat_cols(&[t_new, s_new])
}
