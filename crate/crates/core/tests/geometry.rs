mod common;

use common::{gauss, k, point, points, rng, tangent};
use latte::geometry::*;
use latte::LatteError;
use proptest::prelude::*;

const RESIDENCY: f64 = 1e-5;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

#[test]
fn origin_is_on_the_manifold() {
    for kv in [0.1, 1.0, 7.5] {
        let o = LorentzPoint::origin(4, k(kv));
        assert_eq!(o.residual(k(kv)), 0.0);
        assert_eq!(o.time, kv.sqrt());
    }
}

#[test]
fn nonpositive_curvature_is_rejected() {
    assert!(Curvature::new(0.0).is_err());
    assert!(Curvature::new(-1.0).is_err());
    assert!(Curvature::new(f64::NAN).is_err());
}

#[test]
fn inner_product_of_mismatched_dims_errors() {
    assert!(matches!(
        lorentz_inner(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
        Err(LatteError::Dimension(_))
    ));
}

#[test]
fn distance_from_origin_along_axis() {
    // exp_o(r e_1) lies at geodesic distance r·√K... scaled: d = ‖v‖_L
    let kk = k(2.0);
    let o = LorentzPoint::origin(3, kk);
    let v = TangentVector::at_origin(vec![1.5, 0.0, 0.0], kk);
    let y = exp_map(&o, &v, kk).unwrap();
    assert!((geodesic_distance(&o, &y, kk).unwrap() - 1.5).abs() < 1e-12);
}

#[test]
fn exp_of_non_tangent_vector_errors() {
    let kk = k(1.0);
    let o = LorentzPoint::origin(2, kk);
    let v = TangentVector {
        time: 0.5,
        space: vec![0.1, 0.2],
        base: o.clone(),
    };
    assert!(matches!(
        exp_map(&o, &v, kk),
        Err(LatteError::NotTangent(_))
    ));
}

#[test]
fn zero_tangent_maps_to_base_point() {
    let kk = k(1.3);
    let x = point(&mut rng(1), 5, kk, 1.0);
    assert_eq!(exp_map(&x, &TangentVector::zero(&x), kk).unwrap(), x);
    let l = log_map(&x, &x, kk).unwrap();
    assert!(l.norm() == 0.0);
}

#[test]
fn centroid_of_one_point_is_that_point() {
    let kk = k(0.7);
    let x = point(&mut rng(2), 4, kk, 1.2);
    let c = lorentz_centroid(std::slice::from_ref(&x), &[3.0], kk).unwrap();
    for (a, b) in c.ambient().iter().zip(x.ambient()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn centroid_rejects_bad_weights() {
    let kk = k(1.0);
    let ps = points(&mut rng(3), 3, 2, kk, 1.0);
    assert!(lorentz_centroid(&ps, &[0.0, 0.0, 0.0], kk).is_err());
    assert!(lorentz_centroid(&ps, &[1.0, -1.0, 1.0], kk).is_err());
    assert!(lorentz_centroid(&ps, &[1.0, 1.0], kk).is_err());
    assert!(lorentz_centroid(&[], &[], kk).is_err());
}

#[test]
fn boost_requires_unit_direction() {
    let kk = k(1.0);
    let x = point(&mut rng(4), 3, kk, 1.0);
    assert!(lorentz_boost(&x, &[1.0, 1.0, 0.0], 0.3).is_err());
}

#[test]
fn zero_rapidity_boost_is_identity() {
    let kk = k(1.0);
    let x = point(&mut rng(5), 3, kk, 1.0);
    assert_eq!(lorentz_boost(&x, &[0.0, 1.0, 0.0], 0.0).unwrap(), x);
}

#[test]
fn boost_of_origin_moves_along_direction() {
    // Λ o = (√K cosh ξ, √K sinh ξ v)
    let kk = k(4.0);
    let o = LorentzPoint::origin(2, kk);
    let y = lorentz_boost(&o, &[0.6, 0.8], 0.5).unwrap();
    assert!((y.time - 2.0 * 0.5f64.cosh()).abs() < 1e-12);
    assert!((y.space[0] - 2.0 * 0.5f64.sinh() * 0.6).abs() < 1e-12);
    assert!((y.space[1] - 2.0 * 0.5f64.sinh() * 0.8).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lifted_points_reside(seed in any::<u64>(), kv in 0.05f64..8.0, dim in 1usize..12, scale in 0.01f64..20.0) {
        let kk = k(kv);
        let x = point(&mut rng(seed), dim, kk, scale);
        prop_assert!(x.is_on_manifold(kk, RESIDENCY));
    }

    #[test]
    fn exp_map_resides_and_inverts(seed in any::<u64>(), kv in 0.1f64..5.0, dim in 1usize..10, scale in 0.05f64..2.0) {
        let kk = k(kv);
        let mut r = rng(seed);
        // radii are measured in units of √K; beyond ~20√K, cosh² exceeds
        // what float64 can resolve against K
        let x = point(&mut r, dim, kk, scale * kv.sqrt());
        let v = tangent(&mut r, &x, kk, scale * kv.sqrt());
        let y = exp_map(&x, &v, kk).unwrap();
        prop_assert!(y.is_on_manifold(kk, RESIDENCY));
        let back = log_map(&x, &y, kk).unwrap();
        for (a, b) in back.ambient().iter().zip(v.ambient()) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
        // the log map's norm is the geodesic distance
        let d = geodesic_distance(&x, &y, kk).unwrap();
        prop_assert!((back.norm() - d).abs() <= 1e-6 * (1.0 + d));
    }

    #[test]
    fn log_then_exp_returns_the_point(seed in any::<u64>(), kv in 0.1f64..5.0, dim in 1usize..10) {
        let kk = k(kv);
        let mut r = rng(seed);
        let x = point(&mut r, dim, kk, 1.0);
        let y = point(&mut r, dim, kk, 1.0);
        let v = log_map(&x, &y, kk).unwrap();
        prop_assert!(lorentz_inner(&x.ambient(), &v.ambient()).unwrap().abs() < 1e-8 * (1.0 + x.time * v.norm()));
        let z = exp_map(&x, &v, kk).unwrap();
        for (a, b) in z.ambient().iter().zip(y.ambient()) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn distance_is_a_symmetric_nonnegative_premetric(seed in any::<u64>(), kv in 0.1f64..5.0, dim in 1usize..8) {
        let kk = k(kv);
        let mut r = rng(seed);
        let x = point(&mut r, dim, kk, 1.5);
        let y = point(&mut r, dim, kk, 1.5);
        let dxy = geodesic_distance(&x, &y, kk).unwrap();
        let dyx = geodesic_distance(&y, &x, kk).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert!((dxy - dyx).abs() <= 1e-12 * (1.0 + dxy));
        prop_assert_eq!(geodesic_distance(&x, &x, kk).unwrap(), 0.0);
        prop_assert!(squared_lorentz_distance(&x, &y, kk).unwrap() >= -1e-9);
    }

    #[test]
    fn triangle_inequality(seed in any::<u64>(), dim in 1usize..6) {
        let kk = k(1.0);
        let mut r = rng(seed);
        let p = points(&mut r, 3, dim, kk, 1.0);
        let d = |a: &LorentzPoint, b: &LorentzPoint| geodesic_distance(a, b, kk).unwrap();
        prop_assert!(d(&p[0], &p[2]) <= d(&p[0], &p[1]) + d(&p[1], &p[2]) + 1e-9);
    }

    #[test]
    fn centroid_resides_and_ignores_weight_scale(seed in any::<u64>(), kv in 0.1f64..5.0, n in 1usize..8, c in 0.01f64..100.0) {
        let kk = k(kv);
        let mut r = rng(seed);
        let ps = points(&mut r, n, 4, kk, 1.0);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.05..2.0)).collect();
        let a = lorentz_centroid(&ps, &w, kk).unwrap();
        prop_assert!(a.is_on_manifold(kk, RESIDENCY));
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let b = lorentz_centroid(&ps, &scaled, kk).unwrap();
        for (x, y) in a.ambient().iter().zip(b.ambient()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn concat_keeps_space_parts_exactly(seed in any::<u64>(), kv in 0.1f64..5.0, n in 1usize..5) {
        let kk = k(kv);
        let mut r = rng(seed);
        let ps: Vec<LorentzPoint> = (0..n).map(|i| point(&mut r, 1 + i % 3, kk, 2.0)).collect();
        let c = lorentz_concat(&ps, kk).unwrap();
        let expected: Vec<f64> = ps.iter().flat_map(|p| p.space.clone()).collect();
        prop_assert_eq!(&c.space, &expected);
        prop_assert!(c.is_on_manifold(kk, RESIDENCY));
    }

    #[test]
    fn boosts_reside_and_preserve_distance(seed in any::<u64>(), kv in 0.1f64..5.0, dim in 1usize..8, xi in -3.0f64..3.0) {
        let kk = k(kv);
        let mut r = rng(seed);
        let x = point(&mut r, dim, kk, 1.0);
        let y = point(&mut r, dim, kk, 1.0);
        let v = unit(gauss(&mut r, dim, 1.0));
        let bx = lorentz_boost(&x, &v, xi).unwrap();
        let by = lorentz_boost(&y, &v, xi).unwrap();
        prop_assert!(bx.is_on_manifold(kk, RESIDENCY));
        let d0 = geodesic_distance(&x, &y, kk).unwrap();
        let d1 = geodesic_distance(&bx, &by, kk).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-6 * (1.0 + d0), "{d0} vs {d1}");
        // the opposite rapidity undoes the boost
        let back = lorentz_boost(&bx, &v, -xi).unwrap();
        for (a, b) in back.ambient().iter().zip(x.ambient()) {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn wrapped_normal_samples_reside(seed in any::<u64>(), kv in 0.1f64..5.0, std in 0.01f64..1.5) {
        let kk = k(kv);
        let x = wrapped_normal_sample(std * kv.sqrt(), kk, 6, &mut rng(seed));
        prop_assert!(x.is_on_manifold(kk, RESIDENCY));
    }
}

use rand::Rng;
