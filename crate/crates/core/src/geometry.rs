//! Points, tangent vectors and closed-form maps on the Lorentz hyperboloid
//! `{x : −x_t² + ‖x_s‖² = −K, x_t > 0}`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{LatteError, Result};

/// Below this rapidity the exponential map returns its base point.
pub const EXP_EPS: f64 = 1e-9;
/// Below this `β − 1` the logarithmic map returns the zero tangent.
pub const LOG_EPS: f64 = 1e-9;
pub const TANGENT_TOL: f64 = 1e-6;
pub const UNIT_TOL: f64 = 1e-6;
pub const CENTROID_EPS: f64 = 1e-12;

/// Curvature surrogate `K`; sectional curvature is `−1/K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(k: f64) -> Result<Self> {
        if k.is_finite() && k > 0.0 {
            Ok(Self(k))
        } else {
            Err(LatteError::InvalidArgument(format!(
                "curvature must be positive and finite, got {k}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Self(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LorentzPoint {
    pub time: f64,
    pub space: Vec<f64>,
}

impl LorentzPoint {
    pub fn origin(dim: usize, k: Curvature) -> Self {
        Self {
            time: k.sqrt(),
            space: vec![0.0; dim],
        }
    }

    /// Splits an ambient vector `[t, s_1, .., s_n]`.
    pub fn from_ambient(ambient: &[f64]) -> Result<Self> {
        match ambient.split_first() {
            Some((&time, space)) if !space.is_empty() => Ok(Self {
                time,
                space: space.to_vec(),
            }),
            _ => Err(LatteError::Dimension(format!(
                "ambient vector needs at least 2 entries, got {}",
                ambient.len()
            ))),
        }
    }

    pub fn ambient(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.space.len() + 1);
        v.push(self.time);
        v.extend_from_slice(&self.space);
        v
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    /// `|⟨x, x⟩_L + K|`.
    pub fn residual(&self, k: Curvature) -> f64 {
        (self_inner(self.time, &self.space, self.time, &self.space) + k.value()).abs()
    }

    pub fn is_on_manifold(&self, k: Curvature, tol: f64) -> bool {
        self.time > 0.0 && self.residual(k) <= tol * k.value()
    }
}

/// A vector in the tangent space at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub time: f64,
    pub space: Vec<f64>,
    pub base: LorentzPoint,
}

impl TangentVector {
    pub fn zero(base: &LorentzPoint) -> Self {
        Self {
            time: 0.0,
            space: vec![0.0; base.dim()],
            base: base.clone(),
        }
    }

    /// A tangent at the origin is any vector with zero time component.
    pub fn at_origin(space: Vec<f64>, k: Curvature) -> Self {
        let base = LorentzPoint::origin(space.len(), k);
        Self {
            time: 0.0,
            space,
            base,
        }
    }

    /// `√⟨v, v⟩_L`, clamped at zero.
    pub fn norm(&self) -> f64 {
        self_inner(self.time, &self.space, self.time, &self.space)
            .max(0.0)
            .sqrt()
    }

    pub fn ambient(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.space.len() + 1);
        v.push(self.time);
        v.extend_from_slice(&self.space);
        v
    }
}

#[inline]
fn self_inner(xt: f64, xs: &[f64], yt: f64, ys: &[f64]) -> f64 {
    -xt * yt + xs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>()
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(LatteError::Dimension(format!(
            "space dimensions differ: {a} vs {b}"
        )));
    }
    Ok(())
}

/// `−x_t y_t + x_s · y_s` on ambient vectors.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(LatteError::Dimension(format!(
            "lorentz_inner needs equal ambient dimensions >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(self_inner(x[0], &x[1..], y[0], &y[1..]))
}

pub fn point_inner(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_dims(x.dim(), y.dim())?;
    Ok(self_inner(x.time, &x.space, y.time, &y.space))
}

/// Attaches the time component `√(K + ‖s‖²)`.
pub fn lift_to_manifold(space: &[f64], k: Curvature) -> Result<LorentzPoint> {
    if let Some(bad) = space.iter().find(|v| !v.is_finite()) {
        return Err(LatteError::NonFinite(format!(
            "cannot lift space vector containing {bad}"
        )));
    }
    let sq: f64 = space.iter().map(|v| v * v).sum();
    Ok(LorentzPoint {
        time: (k.value() + sq).sqrt(),
        space: space.to_vec(),
    })
}

pub fn exp_map(x: &LorentzPoint, v: &TangentVector, k: Curvature) -> Result<LorentzPoint> {
    check_dims(x.dim(), v.space.len())?;
    let tangency = self_inner(x.time, &x.space, v.time, &v.space);
    let scale = euclid_norm(x.time, &x.space) * euclid_norm(v.time, &v.space);
    if tangency.abs() > TANGENT_TOL * scale.max(1.0) {
        return Err(LatteError::NotTangent(tangency.abs()));
    }
    let norm = v.norm();
    let alpha = norm / k.sqrt();
    if alpha < EXP_EPS {
        return Ok(x.clone());
    }
    let (c, s) = (alpha.cosh(), alpha.sinh() / alpha);
    let space: Vec<f64> = x
        .space
        .iter()
        .zip(&v.space)
        .map(|(a, b)| c * a + s * b)
        .collect();
    // The time coordinate is re-derived from the space part; the direct
    // formula loses residency once cosh(α) grows large.
    let sq: f64 = space.iter().map(|a| a * a).sum();
    Ok(LorentzPoint {
        time: (k.value() + sq).sqrt(),
        space,
    })
}

pub fn log_map(x: &LorentzPoint, y: &LorentzPoint, k: Curvature) -> Result<TangentVector> {
    let beta = -point_inner(x, y)? / k.value();
    if beta - 1.0 < LOG_EPS {
        return Ok(TangentVector::zero(x));
    }
    let coef = beta.acosh() / (beta * beta - 1.0).sqrt();
    Ok(TangentVector {
        time: coef * (y.time - beta * x.time),
        space: y
            .space
            .iter()
            .zip(&x.space)
            .map(|(b, a)| coef * (b - beta * a))
            .collect(),
        base: x.clone(),
    })
}

/// `√K · acosh(max(1, −⟨x, y⟩_L / K))`.
///
/// Evaluated as `2√K · asinh(‖x − y‖_L / 2√K)`, the same function written so
/// that rounding near `x = y` cannot push the result away from zero. The
/// clamp becomes `‖x − y‖²_L ≥ 0`.
pub fn geodesic_distance(x: &LorentzPoint, y: &LorentzPoint, k: Curvature) -> Result<f64> {
    check_dims(x.dim(), y.dim())?;
    let dt = x.time - y.time;
    let ds: f64 = x
        .space
        .iter()
        .zip(&y.space)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let chord = (ds - dt * dt).max(0.0).sqrt();
    Ok(2.0 * k.sqrt() * (chord / (2.0 * k.sqrt())).asinh())
}

/// `−2K − 2⟨x, y⟩_L`.
pub fn squared_lorentz_distance(x: &LorentzPoint, y: &LorentzPoint, k: Curvature) -> Result<f64> {
    Ok(-2.0 * k.value() - 2.0 * point_inner(x, y)?)
}

/// Weighted centroid `√K · Σνx / √|⟨Σνx, Σνx⟩_L|`.
pub fn lorentz_centroid(
    points: &[LorentzPoint],
    weights: &[f64],
    k: Curvature,
) -> Result<LorentzPoint> {
    if points.is_empty() {
        return Err(LatteError::InvalidArgument(
            "centroid of zero points".into(),
        ));
    }
    if points.len() != weights.len() {
        return Err(LatteError::Dimension(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(LatteError::InvalidArgument(
            "centroid weights must be finite and nonnegative".into(),
        ));
    }
    if weights.iter().all(|w| *w == 0.0) {
        return Err(LatteError::InvalidArgument(
            "centroid weights are all zero".into(),
        ));
    }
    let dim = points[0].dim();
    let mut time = 0.0;
    let mut space = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        check_dims(dim, p.dim())?;
        time += w * p.time;
        for (s, v) in space.iter_mut().zip(&p.space) {
            *s += w * v;
        }
    }
    let sq = self_inner(time, &space, time, &space).abs();
    if sq < CENTROID_EPS {
        return Err(LatteError::DegenerateCentroid(sq));
    }
    let scale = k.sqrt() / sq.sqrt();
    Ok(LorentzPoint {
        time: time * scale,
        space: space.into_iter().map(|v| v * scale).collect(),
    })
}

/// Concatenates space parts and recomputes the time component.
pub fn lorentz_concat(points: &[LorentzPoint], k: Curvature) -> Result<LorentzPoint> {
    if points.is_empty() {
        return Err(LatteError::InvalidArgument(
            "concatenation of zero points".into(),
        ));
    }
    let space: Vec<f64> = points
        .iter()
        .flat_map(|p| p.space.iter().copied())
        .collect();
    lift_to_manifold(&space, k)
}

/// Boost with unit direction `v` and rapidity `xi`.
pub fn lorentz_boost(x: &LorentzPoint, v: &[f64], xi: f64) -> Result<LorentzPoint> {
    check_dims(x.dim(), v.len())?;
    let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if (vn - 1.0).abs() > UNIT_TOL {
        return Err(LatteError::InvalidArgument(format!(
            "boost direction must be a unit vector, has norm {vn}"
        )));
    }
    let sv: f64 = x.space.iter().zip(v).map(|(a, b)| a * b).sum();
    let (ch, sh) = (xi.cosh(), xi.sinh());
    let shift = sv * (ch - 1.0) + x.time * sh;
    Ok(LorentzPoint {
        time: x.time * ch + sv * sh,
        space: x.space.iter().zip(v).map(|(a, b)| a + b * shift).collect(),
    })
}

/// Gaussian tangent vector at the origin pushed through the exponential map.
pub fn wrapped_normal_sample<R: Rng + ?Sized>(
    std: f64,
    k: Curvature,
    dim: usize,
    rng: &mut R,
) -> LorentzPoint {
    let space: Vec<f64> = (0..dim)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let v = TangentVector::at_origin(space, k);
    exp_map(&v.base.clone(), &v, k).expect("origin tangents are tangent by construction")
}

fn euclid_norm(t: f64, s: &[f64]) -> f64 {
    (t * t + s.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    const K1: Curvature = Curvature(1.0);

    fn p(time: f64, space: &[f64]) -> LorentzPoint {
        LorentzPoint {
            time,
            space: space.to_vec(),
        }
    }

    #[test]
    fn inner_product_examples() {
        let o = LorentzPoint::origin(2, K1);
        assert_eq!(point_inner(&o, &o).unwrap(), -1.0);
        let x = [2.0, 3f64.sqrt(), 0.0];
        assert!((lorentz_inner(&x, &x).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(
            lorentz_inner(&[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0]).unwrap(),
            0.0
        );
        assert!(lorentz_inner(&[1.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn lift_examples() {
        assert_eq!(
            lift_to_manifold(&[0.0, 0.0], K1).unwrap(),
            LorentzPoint::origin(2, K1)
        );
        assert_eq!(
            lift_to_manifold(&[3.0, 4.0], K1).unwrap().time,
            26f64.sqrt()
        );
        let k4 = Curvature::new(4.0).unwrap();
        assert_eq!(lift_to_manifold(&[1.0], k4).unwrap().time, 5f64.sqrt());
        assert!(lift_to_manifold(&[f64::NAN], K1).is_err());
    }

    #[test]
    fn exp_and_log_at_origin() {
        let o = LorentzPoint::origin(2, K1);
        let y = exp_map(&o, &TangentVector::at_origin(vec![1.0, 0.0], K1), K1).unwrap();
        assert!((y.time - 1f64.cosh()).abs() < 1e-15);
        assert!((y.space[0] - 1f64.sinh()).abs() < 1e-15);
        let v = log_map(&o, &p(1f64.cosh(), &[1f64.sinh(), 0.0]), K1).unwrap();
        assert!(
            v.time.abs() < 1e-12 && (v.space[0] - 1.0).abs() < 1e-12 && v.space[1].abs() < 1e-12
        );
        assert_eq!(exp_map(&y, &TangentVector::zero(&y), K1).unwrap(), y);
        assert_eq!(log_map(&y, &y, K1).unwrap(), TangentVector::zero(&y));
    }

    #[test]
    fn exp_rejects_non_tangent() {
        let o = LorentzPoint::origin(1, K1);
        let v = TangentVector {
            time: 0.5,
            space: vec![0.0],
            base: o.clone(),
        };
        assert!(matches!(
            exp_map(&o, &v, K1),
            Err(LatteError::NotTangent(_))
        ));
    }

    #[test]
    fn distances_at_unit_geodesic() {
        let o = LorentzPoint::origin(2, K1);
        let y = p(1f64.cosh(), &[1f64.sinh(), 0.0]);
        assert!((geodesic_distance(&o, &y, K1).unwrap() - 1.0).abs() < 1e-12);
        let sq = squared_lorentz_distance(&o, &y, K1).unwrap();
        assert!((sq - (-2.0 + 2.0 * 1f64.cosh())).abs() < 1e-15);
        assert!((sq - 1.08616).abs() < 1e-5);
        assert_eq!(geodesic_distance(&y, &y, K1).unwrap(), 0.0);
    }

    #[test]
    fn centroid_examples() {
        let a = p(1f64.cosh(), &[1f64.sinh()]);
        let b = p(1f64.cosh(), &[-1f64.sinh()]);
        let c = lorentz_centroid(&[a.clone(), b], &[1.0, 1.0], K1).unwrap();
        assert!((c.time - 1.0).abs() < 1e-15 && c.space[0].abs() < 1e-15);
        let single = lorentz_centroid(std::slice::from_ref(&a), &[1.0], K1).unwrap();
        assert!((single.time - a.time).abs() < 1e-14);
        assert!(lorentz_centroid(&[a], &[0.0], K1).is_err());
    }

    #[test]
    fn concat_example() {
        let x = p(2f64.sqrt(), &[1.0]);
        let y = p(5f64.sqrt(), &[2.0]);
        let z = lorentz_concat(&[x, y], K1).unwrap();
        assert_eq!(z.space, vec![1.0, 2.0]);
        assert_eq!(z.time, 6f64.sqrt());
    }

    #[test]
    fn boost_examples() {
        let o = LorentzPoint::origin(2, K1);
        let b = lorentz_boost(&o, &[1.0, 0.0], 1.0).unwrap();
        assert!((b.time - 1f64.cosh()).abs() < 1e-15 && (b.space[0] - 1f64.sinh()).abs() < 1e-15);
        assert_eq!(lorentz_boost(&b, &[0.0, 1.0], 0.0).unwrap(), b);
        assert!(lorentz_boost(&o, &[1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn wrapped_normal_tiny_std_is_origin() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = wrapped_normal_sample(1e-300, K1, 4, &mut rng);
        assert!(s.space.iter().all(|v| v.abs() < 1e-298));
        assert_eq!(s.time, 1.0);
    }
}
