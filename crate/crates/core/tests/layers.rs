mod common;

use common::{k, param_grad_check, point, points, points_tensor, probe, random_tensor, rng};
use latte::autodiff::gradcheck::grad_check;
use latte::autodiff::{Graph, LrGroup, Tensor, Var};
use latte::geometry::*;
use latte::layers::conv::BN_EPS;
use latte::layers::hyper::{self, points_to_tensor, tensor_to_points};
use latte::layers::lfc::lorentz_fc;
use latte::layers::norm::tangent_layernorm;
use latte::layers::*;
use latte::LatteError;
use proptest::prelude::*;
use rand::Rng;

const RESIDENCY: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn values(g: &Graph, v: Var) -> Vec<LorentzPoint> {
    tensor_to_points(&g.value(v))
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
    }
}

fn fc_oracle(fc: &LorentzFc, x: &LorentzPoint, kk: Curvature) -> LorentzPoint {
    let w = &fc.weight.value;
    let space: Vec<f64> = (0..w.rows())
        .map(|o| {
            let s: f64 = w.row(o).iter().zip(&x.space).map(|(a, b)| a * b).sum();
            let y = s + fc.bias.value.get(0, o);
            if fc.relu {
                y.max(0.0)
            } else {
                y
            }
        })
        .collect();
    lift_to_manifold(&space, kk).unwrap()
}

// ---------------------------------------------------------------- LFC

#[test]
fn lfc_identity_weight_keeps_input() {
    let kk = k(1.0);
    let mut fc = LorentzFc::new("fc", 4, 4, &mut rng(0));
    fc.weight.value = Tensor::identity(4);
    let x = points_tensor(&mut rng(1), 5, 4, kk, 1.0);
    let g = Graph::new();
    let y = fc.forward(&g, g.input(x.clone()), kk).unwrap();
    assert_close(g.value(y).data(), x.data(), 1e-14);
}

#[test]
fn lfc_zero_weight_maps_to_origin() {
    let kk = k(2.0);
    let mut fc = LorentzFc::new("fc", 3, 2, &mut rng(0));
    fc.weight.value = Tensor::zeros(2, 3);
    let g = Graph::new();
    let y = fc
        .forward(&g, g.input(points_tensor(&mut rng(1), 4, 3, kk, 1.0)), kk)
        .unwrap();
    for p in values(&g, y) {
        assert_eq!(p, LorentzPoint::origin(2, kk));
    }
}

#[test]
fn lfc_rejects_wrong_width() {
    let kk = k(1.0);
    let fc = LorentzFc::new("fc", 3, 2, &mut rng(0));
    let g = Graph::new();
    let x = g.input(points_tensor(&mut rng(1), 2, 4, kk, 1.0));
    assert!(matches!(
        fc.forward(&g, x, kk),
        Err(LatteError::Dimension(_))
    ));
}

#[test]
fn lfc_matches_pointwise_oracle_and_resides() {
    let mut r = rng(7);
    for trial in 0..1000 {
        let kk = k(r.random_range(0.2..3.0));
        let (din, dout) = (r.random_range(1..6), r.random_range(1..6));
        let mut fc = LorentzFc::new("fc", din, dout, &mut r);
        fc.bias.value = random_tensor(&mut r, 1, dout, 0.5);
        fc.relu = trial % 2 == 0;
        let pts = points(&mut r, 3, din, kk, 1.0);
        let g = Graph::new();
        let y = fc.forward(&g, g.input(points_to_tensor(&pts)), kk).unwrap();
        for (out, x) in values(&g, y).iter().zip(&pts) {
            assert!(out.is_on_manifold(kk, RESIDENCY));
            assert_close(&out.ambient(), &fc_oracle(&fc, x, kk).ambient(), 1e-12);
        }
    }
}

#[test]
fn lfc_gradients_match_finite_differences() {
    let kk = k(1.5);
    let mut r = rng(3);
    let s = random_tensor(&mut r, 4, 3, 1.0);
    let w = random_tensor(&mut r, 2, 3, 0.7);
    let b = random_tensor(&mut r, 1, 2, 0.3);
    let report = grad_check(
        &[s, w, b],
        |g, v| {
            probe(
                g,
                lorentz_fc(g, hyper::lift(g, v[0], kk), v[1], v[2], false, kk),
                11,
            )
        },
        GRAD_TOL,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

// ---------------------------------------------------------------- LoRA

fn lora_layer(seed: u64, out: usize, inp: usize, rank: usize, scale: f64) -> LoraLinear {
    let spec = LoraSpec {
        rank,
        scale,
        q_init: QInit::Normal { std: 0.5 },
        group: LrGroup::Base,
    };
    LoraLinear::new(
        "lin",
        out,
        inp,
        true,
        &[0, 1, 5],
        Some(spec),
        &mut rng(seed),
    )
}

fn dense_oracle(l: &LoraLinear, subject: Option<u32>, x: &[f64]) -> Vec<f64> {
    let mut w = l.weight.value.clone();
    if let Some(f) = subject.and_then(|s| l.bank.get(s)) {
        w.add_assign(&f.dense());
    }
    (0..w.rows())
        .map(|o| {
            w.row(o).iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                + l.bias.as_ref().map_or(0.0, |b| b.value.get(0, o))
        })
        .collect()
}

fn run_lora(
    l: &LoraLinear,
    x: &Tensor,
    subjects: &[u32],
    policy: AdapterPolicy,
) -> Result<Tensor, LatteError> {
    let g = Graph::new();
    let routing = SubjectRows::from_trials(subjects, 1);
    let y = l.forward(&g, g.input(x.clone()), &routing, policy)?;
    Ok((*g.value(y)).clone())
}

#[test]
fn lora_at_init_equals_shared_map() {
    let l = lora_layer(0, 3, 4, 2, 1.0);
    let x = random_tensor(&mut rng(1), 3, 4, 1.0);
    let with = run_lora(&l, &x, &[0, 1, 5], AdapterPolicy::Strict).unwrap();
    let without = run_lora(&l, &x, &[0, 1, 5], AdapterPolicy::Off).unwrap();
    assert_eq!(with.data(), without.data());
}

#[test]
fn lora_full_rank_cancellation_gives_zero_map() {
    let mut l = lora_layer(0, 3, 3, 3, 1.0);
    l.bias = None;
    let f = l.bank.adapters.get_mut(&1).unwrap();
    f.q.value = Tensor::identity(3);
    f.r.value = l.weight.value.transpose().scale(-1.0);
    let x = random_tensor(&mut rng(1), 2, 3, 1.0);
    let y = run_lora(&l, &x, &[1, 1], AdapterPolicy::Strict).unwrap();
    assert!(y.max_abs() < 1e-12);
}

#[test]
fn lora_matches_dense_materialization() {
    let mut r = rng(9);
    for seed in 0..20 {
        let mut l = lora_layer(seed, 4, 4, 2, 0.7);
        for f in l.bank.adapters.values_mut() {
            f.r.value = random_tensor(&mut r, 4, 2, 1.0);
        }
        l.bias.as_mut().unwrap().value = random_tensor(&mut r, 1, 4, 1.0);
        let subjects = [5, 0, 9, 1, 0];
        let x = random_tensor(&mut r, subjects.len(), 4, 1.0);
        let y = run_lora(&l, &x, &subjects, AdapterPolicy::ZeroForUnknown).unwrap();
        for (i, s) in subjects.iter().enumerate() {
            // subject 9 has no adapter and must see the shared map exactly
            let want = dense_oracle(&l, Some(*s), x.row(i));
            for (a, b) in y.row(i).iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
        assert!(matches!(
            run_lora(&l, &x, &subjects, AdapterPolicy::Strict),
            Err(LatteError::UnknownSubject(9))
        ));
    }
}

#[test]
fn lora_gradients_match_finite_differences() {
    let mut l = lora_layer(4, 3, 4, 2, 0.5);
    for f in l.bank.adapters.values_mut() {
        f.r.value = random_tensor(&mut rng(5), 4, 2, 1.0);
    }
    let x = random_tensor(&mut rng(6), 4, 4, 1.0);
    let report = param_grad_check(
        &l,
        |g, l| {
            let routing = SubjectRows::from_trials(&[0, 5, 5, 1], 1);
            probe(
                g,
                l.forward(g, g.input(x.clone()), &routing, AdapterPolicy::Strict)
                    .unwrap(),
                2,
            )
        },
        16,
        GRAD_TOL,
    );
    assert!(report.passed, "{report:?}");
}

// ---------------------------------------------------------------- boosts

fn boost_adapter(dim: usize, boosts: usize, seed: u64) -> BoostAdapter {
    let mut a = BoostAdapter::new("b", dim, boosts, 0.1, LrGroup::Base, &mut rng(seed));
    a.magnitudes.value = random_tensor(&mut rng(seed + 1), 1, boosts, 5.0);
    a
}

#[test]
fn zero_magnitude_boosts_are_identity() {
    let kk = k(1.0);
    let a = BoostAdapter::new("b", 3, 2, 0.1, LrGroup::Base, &mut rng(0));
    let x = point(&mut rng(1), 3, kk, 1.0);
    assert_eq!(a.apply_point(&x).unwrap(), x);
}

#[test]
fn single_boost_of_origin() {
    let kk = k(1.0);
    let mut a = BoostAdapter::new("b", 3, 1, 1.0, LrGroup::Base, &mut rng(0));
    a.directions.value = Tensor::row_vector(&[1.0, 0.0, 0.0]);
    a.magnitudes.value = Tensor::scalar(1.0);
    let y = a.apply_point(&LorentzPoint::origin(3, kk)).unwrap();
    assert_close(&y.ambient(), &[1f64.cosh(), 1f64.sinh(), 0.0, 0.0], 1e-15);
    let g = Graph::new();
    let out = a
        .apply(
            &g,
            g.input(points_to_tensor(&[LorentzPoint::origin(3, kk)])),
        )
        .unwrap();
    assert_close(g.value(out).data(), &y.ambient(), 1e-15);
}

#[test]
fn zero_direction_is_rejected() {
    let mut a = BoostAdapter::new("b", 2, 1, 1.0, LrGroup::Base, &mut rng(0));
    a.directions.value = Tensor::zeros(1, 2);
    let x = LorentzPoint::origin(2, k(1.0));
    assert!(a.apply_point(&x).is_err());
    let g = Graph::new();
    assert!(a.apply(&g, g.input(points_to_tensor(&[x]))).is_err());
}

#[test]
fn boost_bank_passes_unknown_subjects_through() {
    let kk = k(1.0);
    let mut bank = BoostBank::new("bb", &[0], 3, 2, 0.1, LrGroup::Base, &mut rng(0));
    bank.adapters.get_mut(&0).unwrap().magnitudes.value = Tensor::row_vector(&[3.0, -2.0]);
    let x = points_tensor(&mut rng(1), 3, 3, kk, 1.0);
    let g = Graph::new();
    let routing = SubjectRows::from_trials(&[0, 7, 0], 1);
    let y = bank
        .forward(
            &g,
            g.input(x.clone()),
            &routing,
            AdapterPolicy::ZeroForUnknown,
        )
        .unwrap();
    let y = g.value(y);
    assert_eq!(y.row(1), x.row(1));
    assert_ne!(y.row(0), x.row(0));
    assert!(hyper::max_residual(&y, kk) <= RESIDENCY * kk.value());
    let g = Graph::new();
    assert!(matches!(
        bank.forward(&g, g.input(x), &routing, AdapterPolicy::Strict),
        Err(LatteError::UnknownSubject(7))
    ));
}

#[test]
fn boost_gradients_match_finite_differences() {
    let kk = k(1.0);
    let mut bank = BoostBank::new("bb", &[0, 1], 3, 2, 0.5, LrGroup::Base, &mut rng(0));
    for a in bank.adapters.values_mut() {
        a.magnitudes.value = random_tensor(&mut rng(2), 1, 2, 1.0);
    }
    let x = points_tensor(&mut rng(3), 4, 3, kk, 0.8);
    let routing = SubjectRows::from_trials(&[1, 0, 0, 1], 1);
    let report = param_grad_check(
        &bank,
        |g, b| {
            probe(
                g,
                b.forward(g, g.input(x.clone()), &routing, AdapterPolicy::Strict)
                    .unwrap(),
                4,
            )
        },
        8,
        GRAD_TOL,
    );
    assert!(report.passed, "{report:?}");
    let report = grad_check(
        &[random_tensor(&mut rng(4), 4, 3, 1.0)],
        |g, v| {
            let x = hyper::lift(g, v[0], kk);
            probe(
                g,
                bank.forward(g, x, &routing, AdapterPolicy::Strict).unwrap(),
                5,
            )
        },
        GRAD_TOL,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn boost_chains_are_isometries(seed in any::<u64>(), kv in 0.2f64..4.0, dim in 1usize..6, boosts in 1usize..4) {
        let kk = k(kv);
        let a = boost_adapter(dim, boosts, seed);
        let mut r = rng(seed ^ 0x55);
        let x = point(&mut r, dim, kk, kv.sqrt());
        let y = point(&mut r, dim, kk, kv.sqrt());
        let (bx, by) = (a.apply_point(&x).unwrap(), a.apply_point(&y).unwrap());
        prop_assert!(bx.is_on_manifold(kk, RESIDENCY));
        let d0 = geodesic_distance(&x, &y, kk).unwrap();
        let d1 = geodesic_distance(&bx, &by, kk).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-6, "{} vs {}", d0, d1);
        // the graph path agrees with the pointwise one
        let g = Graph::new();
        let out = a.apply(&g, g.input(points_to_tensor(&[x]))).unwrap();
        for (u, v) in g.value(out).data().iter().zip(bx.ambient()) {
            prop_assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()));
        }
    }
}

// ---------------------------------------------------------------- pooling

#[test]
fn unit_window_pool_is_identity() {
    let kk = k(1.0);
    let x = points_tensor(&mut rng(0), 10, 3, kk, 1.0);
    for mode in [PoolMode::Max, PoolMode::Avg] {
        let g = Graph::new();
        let y = hyper_pool(
            &g,
            g.input(x.clone()),
            2,
            5,
            PoolWindow::new(1, 1, 0, 1),
            mode,
            kk,
        )
        .unwrap();
        assert_close(g.value(y).data(), x.data(), 1e-14);
    }
}

#[test]
fn max_pool_picks_larger_radius() {
    let kk = k(1.0);
    let far = LorentzPoint {
        time: 1f64.cosh(),
        space: vec![1f64.sinh()],
    };
    let seq = [LorentzPoint::origin(1, kk), far.clone()];
    let out = hyper_pool_points(&seq, PoolWindow::new(2, 1, 0, 1), PoolMode::Max, kk).unwrap();
    assert_eq!(out, vec![far]);
}

#[test]
fn window_of_only_padding_errors() {
    let kk = k(1.0);
    let seq = points(&mut rng(0), 3, 2, kk, 1.0);
    assert!(hyper_pool_points(&seq, PoolWindow::new(1, 1, 2, 1), PoolMode::Max, kk).is_err());
    assert!(hyper_pool_points(&seq, PoolWindow::new(5, 1, 0, 1), PoolMode::Avg, kk).is_err());
    assert!(hyper_pool_points(&seq, PoolWindow::new(0, 1, 0, 1), PoolMode::Avg, kk).is_err());
}

#[test]
fn max_pool_matches_brute_force() {
    let mut r = rng(17);
    for _ in 0..1000 {
        let kk = k(r.random_range(0.2..3.0));
        let len = r.random_range(1..12);
        let window = PoolWindow::new(
            r.random_range(1..=len.min(4)),
            r.random_range(1..3),
            r.random_range(0..2),
            1,
        );
        let Ok(out_len) = window.output_len(len) else {
            continue;
        };
        if window.windows(len).is_err() {
            continue;
        }
        let seq = points(&mut r, len, 2, kk, 1.5);
        let g = Graph::new();
        let y = hyper_pool(
            &g,
            g.input(points_to_tensor(&seq)),
            1,
            len,
            window,
            PoolMode::Max,
            kk,
        )
        .unwrap();
        let got = values(&g, y);
        assert_eq!(got.len(), out_len);
        for (o, p) in got.iter().enumerate() {
            let start = (o * window.stride) as isize - window.padding as isize;
            let mut best: Option<(f64, usize)> = None;
            for m in 0..window.kernel {
                let j = start + m as isize;
                if j < 0 || j as usize >= len {
                    continue;
                }
                let s = (-point_inner(&seq[j as usize], &LorentzPoint::origin(2, kk)).unwrap()
                    / kk.value())
                .max(1.0)
                .acosh();
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, j as usize));
                }
            }
            // selection, never interpolation
            assert_eq!(p, &seq[best.unwrap().1]);
        }
    }
}

#[test]
fn avg_pool_is_uniform_centroid() {
    let kk = k(0.8);
    let seq = points(&mut rng(2), 6, 3, kk, 1.0);
    let window = PoolWindow::new(3, 2, 1, 1);
    let g = Graph::new();
    let y = hyper_pool(
        &g,
        g.input(points_to_tensor(&seq)),
        1,
        6,
        window,
        PoolMode::Avg,
        kk,
    )
    .unwrap();
    for (out, members) in values(&g, y).iter().zip(window.windows(6).unwrap()) {
        let pts: Vec<LorentzPoint> = members.iter().map(|&j| seq[j].clone()).collect();
        let c = lorentz_centroid(&pts, &vec![1.0; pts.len()], kk).unwrap();
        assert_close(&out.ambient(), &c.ambient(), 1e-12);
        assert!(out.is_on_manifold(kk, RESIDENCY));
    }
}

#[test]
fn pool_gradients_match_finite_differences() {
    let kk = k(1.0);
    // radii are well separated so the max selection is stable under h
    let s = Tensor::from_fn(6, 2, |r, c| {
        (r as f64 * 0.37 + 0.2) * if c == 0 { 1.0 } else { -0.5 }
    });
    for mode in [PoolMode::Avg, PoolMode::Max] {
        let report = grad_check(
            std::slice::from_ref(&s),
            |g, v| {
                let x = hyper::lift(g, v[0], kk);
                probe(
                    g,
                    hyper_pool(g, x, 2, 3, PoolWindow::new(2, 1, 0, 1), mode, kk).unwrap(),
                    3,
                )
            },
            GRAD_TOL,
        )
        .unwrap();
        assert!(report.passed, "{mode:?}: {report:?}");
    }
}

// ---------------------------------------------------------------- inception

fn inception(d: usize, seed: u64) -> InceptionBlock {
    let shape = InceptionShape {
        in_dim: d,
        bottleneck: 3,
        filters: 2,
        kernels: vec![1, 3, 5],
    };
    InceptionBlock::new("inc", &shape, PoolMode::Max, &mut rng(seed)).unwrap()
}

#[test]
fn inception_shape_contract_and_residency() {
    for (kv, train) in [(1.0, true), (0.3, false), (2.5, true)] {
        let kk = k(kv);
        let block = inception(4, 1);
        assert_eq!(block.out_dim(), 4 * 2);
        let x = points_tensor(&mut rng(2), 3 * 7, 4, kk, 1.0);
        let g = Graph::new();
        let mut ctx = if train { Ctx::train() } else { Ctx::eval() };
        let y = block.forward(&g, g.input(x), 3, 7, kk, &mut ctx).unwrap();
        let y = g.value(y);
        assert_eq!(y.shape(), (21, 9));
        assert!(hyper::max_residual(&y, kk) <= RESIDENCY * kk.value());
    }
}

#[test]
fn inception_rejects_bad_shapes() {
    let shape = InceptionShape {
        in_dim: 2,
        bottleneck: 3,
        filters: 2,
        kernels: vec![1],
    };
    assert!(InceptionBlock::new("inc", &shape, PoolMode::Max, &mut rng(0)).is_err());
    let shape = InceptionShape {
        in_dim: 4,
        bottleneck: 3,
        filters: 2,
        kernels: vec![4],
    };
    assert!(InceptionBlock::new("inc", &shape, PoolMode::Max, &mut rng(0)).is_err());
}

#[test]
fn identity_branches_replicate_bottleneck_space() {
    let kk = k(1.0);
    let shape = InceptionShape {
        in_dim: 3,
        bottleneck: 3,
        filters: 3,
        kernels: vec![1, 1, 1],
    };
    let mut block = InceptionBlock::new("inc", &shape, PoolMode::Avg, &mut rng(0)).unwrap();
    block.pool_window = PoolWindow::new(1, 1, 0, 1);
    block.visit_mut(&mut |p| {
        if p.name.ends_with(".conv.w") {
            p.value = Tensor::identity(3);
        }
    });
    block.visit_buffers_mut(&mut |name, t| {
        if name.ends_with("running_var") {
            *t = Tensor::filled(1, 3, 1.0 - BN_EPS);
        }
    });
    let mut r = rng(1);
    let s = Tensor::from_fn(8, 3, |_, _| r.random_range(0.1..2.0));
    let g = Graph::new();
    let x = hyper::lift(&g, g.input(s.clone()), kk);
    let y = block.forward(&g, x, 2, 4, kk, &mut Ctx::eval()).unwrap();
    let y = g.value(y);
    for row in 0..8 {
        let want: Vec<f64> = (0..4).flat_map(|_| s.row(row).to_vec()).collect();
        assert_close(&y.row(row)[1..], &want, 1e-12);
    }
}

#[test]
fn inception_gradients_match_finite_differences() {
    let kk = k(1.0);
    let block = inception(3, 5);
    let x = points_tensor(&mut rng(6), 2 * 5, 3, kk, 1.0);
    let report = param_grad_check(
        &block,
        |g, b| {
            probe(
                g,
                b.forward(g, g.input(x.clone()), 2, 5, kk, &mut Ctx::train())
                    .unwrap(),
                7,
            )
        },
        6,
        GRAD_TOL,
    );
    assert!(report.passed, "{report:?}");
}

// ---------------------------------------------------------------- layer norm

#[test]
fn layernorm_keeps_standardized_space() {
    let kk = k(1.0);
    let ln = TangentLayerNorm::new("ln", 4);
    let x = lift_to_manifold(&[1.0, -1.0, 1.0, -1.0], kk).unwrap();
    let g = Graph::new();
    let y = ln.forward(&g, g.input(points_to_tensor(std::slice::from_ref(&x))), kk);
    assert_close(&values(&g, y)[0].space, &x.space, 1e-5);
}

#[test]
fn layernorm_of_constant_space_is_beta() {
    let kk = k(1.0);
    let mut ln = TangentLayerNorm::new("ln", 3);
    ln.beta.value = Tensor::row_vector(&[0.5, -1.0, 2.0]);
    let g = Graph::new();
    let x = lift_to_manifold(&[3.0, 3.0, 3.0], kk).unwrap();
    let y = ln.forward(&g, g.input(points_to_tensor(&[x])), kk);
    let out = &values(&g, y)[0];
    assert_eq!(out.space, vec![0.5, -1.0, 2.0]);
    assert!(out.is_on_manifold(kk, RESIDENCY));
}

#[test]
fn layernorm_resides_and_differentiates() {
    let kk = k(0.6);
    let mut r = rng(8);
    let s = random_tensor(&mut r, 5, 4, 2.0);
    let gamma = random_tensor(&mut r, 1, 4, 1.0);
    let beta = random_tensor(&mut r, 1, 4, 1.0);
    let g = Graph::new();
    let x = hyper::lift(&g, g.input(s.clone()), kk);
    let y = tangent_layernorm(&g, x, g.input(gamma.clone()), g.input(beta.clone()), kk);
    assert!(hyper::max_residual(&g.value(y), kk) <= RESIDENCY * kk.value());
    let report = grad_check(
        &[s, gamma, beta],
        |g, v| {
            probe(
                g,
                tangent_layernorm(g, hyper::lift(g, v[0], kk), v[1], v[2], kk),
                9,
            )
        },
        GRAD_TOL,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

// ---------------------------------------------------------------- attention

/// Direct evaluation of multi-head distance-softmax attention with centroid
/// aggregation, one point at a time.
fn attention_oracle(
    a: &LorentzAttention,
    xs: &[LorentzPoint],
    kk: Curvature,
) -> (Vec<LorentzPoint>, Vec<Vec<Vec<f64>>>) {
    let q: Vec<LorentzPoint> = xs.iter().map(|x| fc_oracle(&a.q, x, kk)).collect();
    let kp: Vec<LorentzPoint> = xs.iter().map(|x| fc_oracle(&a.k, x, kk)).collect();
    let v: Vec<LorentzPoint> = xs.iter().map(|x| fc_oracle(&a.v, x, kk)).collect();
    let dh = a.head_dim();
    let lambda = a.log_lambda.value.item().exp();
    let tau = (dh as f64).sqrt();
    let head =
        |p: &LorentzPoint, h: usize| lift_to_manifold(&p.space[h * dh..(h + 1) * dh], kk).unwrap();
    let mut alphas = vec![Vec::new(); a.heads];
    let out = (0..xs.len())
        .map(|i| {
            let parts: Vec<LorentzPoint> = (0..a.heads)
                .map(|h| {
                    let qi = head(&q[i], h);
                    let logits: Vec<f64> = kp
                        .iter()
                        .map(|kj| {
                            -(lambda / tau)
                                * squared_lorentz_distance(&qi, &head(kj, h), kk).unwrap()
                        })
                        .collect();
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    let alpha: Vec<f64> = e.iter().map(|v| v / z).collect();
                    let vs: Vec<LorentzPoint> = v.iter().map(|vj| head(vj, h)).collect();
                    let c = lorentz_centroid(&vs, &alpha, kk).unwrap();
                    alphas[h].push(alpha);
                    c
                })
                .collect();
            fc_oracle(&a.out, &lorentz_concat(&parts, kk).unwrap(), kk)
        })
        .collect();
    (out, alphas)
}

fn attention(dim: usize, inner: usize, heads: usize, seed: u64) -> LorentzAttention {
    let mut a = LorentzAttention::new("att", dim, inner, heads, &mut rng(seed)).unwrap();
    a.log_lambda.value = Tensor::scalar(0.3);
    a
}

#[test]
fn attention_rejects_indivisible_heads() {
    assert!(LorentzAttention::new("att", 4, 6, 4, &mut rng(0)).is_err());
    assert!(LorentzAttention::new("att", 4, 6, 0, &mut rng(0)).is_err());
}

#[test]
fn attention_matches_direct_evaluation() {
    for (kv, heads, seed) in [(1.0, 1, 0), (0.5, 2, 1), (2.0, 3, 2)] {
        let kk = k(kv);
        let a = attention(3, 6, heads, seed);
        let xs = points(&mut rng(seed + 10), 3, 3, kk, 1.0);
        let (want, want_alpha) = attention_oracle(&a, &xs, kk);
        let g = Graph::new();
        let (y, alphas) = a
            .forward_with_weights(&g, g.input(points_to_tensor(&xs)), 1, 3, kk)
            .unwrap();
        for (got, w) in values(&g, y).iter().zip(&want) {
            assert_close(&got.ambient(), &w.ambient(), 1e-10);
            assert!(got.is_on_manifold(kk, RESIDENCY));
        }
        for (h, alpha) in alphas.iter().enumerate() {
            let t = g.value(*alpha);
            for i in 0..3 {
                assert_close(t.row(i), &want_alpha[h][i], 1e-12);
            }
        }
    }
}

#[test]
fn single_token_attention_is_value_then_output_projection() {
    let kk = k(1.0);
    let a = attention(3, 4, 2, 3);
    let x = point(&mut rng(4), 3, kk, 1.0);
    let g = Graph::new();
    let (y, alphas) = a
        .forward_with_weights(
            &g,
            g.input(points_to_tensor(std::slice::from_ref(&x))),
            1,
            1,
            kk,
        )
        .unwrap();
    for alpha in alphas {
        assert_eq!(g.value(alpha).data(), &[1.0]);
    }
    let want = fc_oracle(&a.out, &fc_oracle(&a.v, &x, kk), kk);
    assert_close(&values(&g, y)[0].ambient(), &want.ambient(), 1e-12);
}

#[test]
fn identical_keys_give_uniform_weights() {
    let kk = k(1.0);
    let mut a = attention(3, 4, 2, 5);
    a.k.weight.value = Tensor::zeros(4, 3);
    let xs = points_tensor(&mut rng(6), 2 * 5, 3, kk, 1.0);
    let g = Graph::new();
    let (_, alphas) = a.forward_with_weights(&g, g.input(xs), 2, 5, kk).unwrap();
    for alpha in alphas {
        for v in g.value(alpha).data() {
            assert!((v - 0.2).abs() < 1e-14);
        }
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    let kk = k(1.0);
    let a = attention(3, 4, 2, 7);
    let xs = points(&mut rng(8), 4, 3, kk, 1.0);
    let perm = [2, 0, 3, 1];
    let permuted: Vec<LorentzPoint> = perm.iter().map(|&i| xs[i].clone()).collect();
    let g = Graph::new();
    let y = values(
        &g,
        a.forward(&g, g.input(points_to_tensor(&xs)), 1, 4, kk)
            .unwrap(),
    );
    let yp = values(
        &g,
        a.forward(&g, g.input(points_to_tensor(&permuted)), 1, 4, kk)
            .unwrap(),
    );
    for (j, &i) in perm.iter().enumerate() {
        assert_close(&yp[j].ambient(), &y[i].ambient(), 1e-12);
    }
}

#[test]
fn attention_rows_are_stochastic() {
    let mut r = rng(9);
    for _ in 0..50 {
        let kk = k(r.random_range(0.2..3.0));
        let a = attention(4, 4, 2, r.random());
        let groups = r.random_range(1..4);
        let tokens = r.random_range(1..6);
        let xs = points_tensor(&mut r, groups * tokens, 4, kk, 1.5);
        let g = Graph::new();
        let (_, alphas) = a
            .forward_with_weights(&g, g.input(xs), groups, tokens, kk)
            .unwrap();
        for alpha in alphas {
            let t = g.value(alpha);
            for i in 0..t.rows() {
                assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn attention_gradients_match_finite_differences() {
    let kk = k(1.0);
    let a = attention(3, 4, 2, 10);
    let x = points_tensor(&mut rng(11), 2 * 3, 3, kk, 0.8);
    let report = param_grad_check(
        &a,
        |g, a| probe(g, a.forward(g, g.input(x.clone()), 2, 3, kk).unwrap(), 12),
        6,
        GRAD_TOL,
    );
    assert!(report.passed, "params: {report:?}");
    let report = grad_check(
        &[random_tensor(&mut rng(13), 6, 3, 0.8)],
        |g, v| {
            probe(
                g,
                a.forward(g, hyper::lift(g, v[0], kk), 2, 3, kk).unwrap(),
                14,
            )
        },
        GRAD_TOL,
    )
    .unwrap();
    assert!(report.passed, "input: {report:?}");
}

// ---------------------------------------------------------------- pre-decoder

fn projection(adapter: PredecoderAdapter, alpha: f64, seed: u64) -> RandomProjection {
    let spec = PredecoderSpec {
        in_dim: 4,
        out_dim: 3,
        rank: 2,
        alpha,
        adapter,
        boosts: 2,
        boost_scale: 0.1,
    };
    RandomProjection::new("pd", &spec, Some(&[0, 1]), &mut rng(seed))
}

fn run_projection(p: &RandomProjection, x: &Tensor, subjects: &[u32], kk: Curvature) -> Tensor {
    let g = Graph::new();
    let routing = SubjectRows::from_trials(subjects, 1);
    let y = p
        .forward(
            &g,
            g.input(x.clone()),
            &routing,
            AdapterPolicy::ZeroForUnknown,
            kk,
        )
        .unwrap();
    (*g.value(y)).clone()
}

#[test]
fn fresh_predecoder_is_the_frozen_projection() {
    let kk = k(1.0);
    let x = points_tensor(&mut rng(1), 3, 4, kk, 1.0);
    for adapter in [PredecoderAdapter::LowRank, PredecoderAdapter::Boost] {
        let p = projection(adapter, 0.5, 0);
        assert!(!p.weight.trainable);
        let y = run_projection(&p, &x, &[0, 1, 0], kk);
        let mut fc = LorentzFc::new("fc", 4, 3, &mut rng(9));
        fc.weight.value = p.weight.value.clone();
        let g = Graph::new();
        let want = fc.forward(&g, g.input(x.clone()), kk).unwrap();
        assert_eq!(y.data(), g.value(want).data());
    }
}

#[test]
fn predecoder_matches_dense_materialization() {
    let kk = k(1.3);
    let mut r = rng(2);
    let mut p = projection(PredecoderAdapter::LowRank, 0.5, 3);
    for f in p.lora.adapters.values_mut() {
        f.r.value = random_tensor(&mut r, 4, 2, 1.0);
    }
    let pts = points(&mut r, 3, 4, kk, 1.0);
    let subjects = [1, 0, 4];
    let y = run_projection(&p, &points_to_tensor(&pts), &subjects, kk);
    for (i, s) in subjects.iter().enumerate() {
        let mut w = p.weight.value.clone();
        if let Some(f) = p.lora.get(*s) {
            w.add_assign(&f.dense());
        }
        let space: Vec<f64> = (0..3)
            .map(|o| w.row(o).iter().zip(&pts[i].space).map(|(a, b)| a * b).sum())
            .collect();
        let want = lift_to_manifold(&space, kk).unwrap();
        assert_close(y.row(i), &want.ambient(), 1e-12);
    }
}

#[test]
fn zero_alpha_disables_the_adapter() {
    let kk = k(1.0);
    let mut p = projection(PredecoderAdapter::LowRank, 0.0, 3);
    for f in p.lora.adapters.values_mut() {
        f.r.value = random_tensor(&mut rng(4), 4, 2, 1.0);
    }
    let x = points_tensor(&mut rng(5), 2, 4, kk, 1.0);
    let with = run_projection(&p, &x, &[0, 1], kk);
    let without = run_projection(&p, &x, &[7, 7], kk);
    assert_eq!(with.data(), without.data());
}

// ---------------------------------------------------------------- prototypes

#[test]
fn logit_at_own_prototype_is_zero() {
    let kk = k(1.0);
    let set = PrototypeSet::wrapped_normal("p", 4, 3, 1.0, false, kk, &mut rng(0));
    let protos = set.points(kk);
    for (j, p) in protos.iter().enumerate() {
        let logits = prototype_logits(p, &protos, kk).unwrap();
        assert!(logits[j].abs() < 1e-12);
        for (c, l) in logits.iter().enumerate() {
            if c != j {
                assert!(*l < 0.0);
            }
        }
        assert_eq!(predict(&logits), j);
    }
}

#[test]
fn ties_break_to_lowest_class() {
    let kk = k(1.0);
    let protos = vec![
        lift_to_manifold(&[0.0, 1.0], kk).unwrap(),
        lift_to_manifold(&[0.0, -1.0], kk).unwrap(),
    ];
    let logits = prototype_logits(&LorentzPoint::origin(2, kk), &protos, kk).unwrap();
    assert_eq!(logits[0], logits[1]);
    assert_eq!(predict(&logits), 0);
    assert_eq!(predict(&[1.0, 3.0, 3.0]), 1);
}

#[test]
fn graph_logits_match_nearest_prototype() {
    let mut r = rng(1);
    for _ in 0..200 {
        let kk = k(r.random_range(0.3..3.0));
        let set = PrototypeSet::wrapped_normal("p", 5, 3, 1.0, true, kk, &mut r);
        let zs = points(&mut r, 4, 3, kk, 1.0);
        let g = Graph::new();
        let logits = set.logits(&g, g.input(points_to_tensor(&zs)), kk).unwrap();
        let logits = g.value(logits);
        let protos = set.points(kk);
        for (i, z) in zs.iter().enumerate() {
            let want = prototype_logits(z, &protos, kk).unwrap();
            assert_close(logits.row(i), &want, 1e-10);
            let nearest = (0..5)
                .min_by(|&a, &b| {
                    geodesic_distance(z, &protos[a], kk)
                        .unwrap()
                        .total_cmp(&geodesic_distance(z, &protos[b], kk).unwrap())
                })
                .unwrap();
            assert_eq!(predict(logits.row(i)), nearest);
        }
    }
}

#[test]
fn prototype_width_mismatch_errors() {
    let kk = k(1.0);
    let set = PrototypeSet::wrapped_normal("p", 2, 3, 1.0, false, kk, &mut rng(0));
    let g = Graph::new();
    let z = g.input(points_tensor(&mut rng(1), 1, 4, kk, 1.0));
    assert!(set.logits(&g, z, kk).is_err());
}

// ---------------------------------------------------------------- primitives

#[test]
fn origin_maps_agree_with_pointwise_geometry() {
    let kk = k(0.7);
    let pts = points(&mut rng(3), 5, 3, kk, 1.5);
    let g = Graph::new();
    let x = g.input(points_to_tensor(&pts));
    let logs = g.value(hyper::log_origin(&g, x, kk));
    let o = LorentzPoint::origin(3, kk);
    for (i, p) in pts.iter().enumerate() {
        assert_close(logs.row(i), &log_map(&o, p, kk).unwrap().space, 1e-10);
    }
    let back = g.value(hyper::exp_origin(&g, g.constant((*logs).clone()), kk));
    assert_close(back.data(), points_to_tensor(&pts).data(), 1e-10);
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let kk = k(1.2);
    let mut r = rng(4);
    let a = random_tensor(&mut r, 4, 3, 1.0);
    let b = random_tensor(&mut r, 4, 3, 1.0);
    type Op = fn(&Graph, Var, Var, Curvature) -> Var;
    let ops: [(&str, Op); 6] = [
        ("sq_dist_rows", |g, x, y, k| hyper::sq_dist_rows(g, x, y, k)),
        ("sq_dist_pairs", |g, x, y, k| {
            hyper::sq_dist_pairs(g, x, y, k)
        }),
        ("dist_rows", |g, x, y, k| hyper::dist_rows(g, x, y, k)),
        ("log_origin", |g, x, _, k| hyper::log_origin(g, x, k)),
        ("hcat", |g, x, y, k| hyper::hcat(g, &[x, y], k)),
        ("normalize_rows", |g, x, y, k| {
            hyper::normalize_rows(g, g.add(x, y), k)
        }),
    ];
    for (name, op) in ops {
        let report = grad_check(
            &[a.clone(), b.clone()],
            |g, v| {
                probe(
                    g,
                    op(g, hyper::lift(g, v[0], kk), hyper::lift(g, v[1], kk), kk),
                    1,
                )
            },
            GRAD_TOL,
        )
        .unwrap();
        assert!(report.passed, "{name}: {report:?}");
    }
    let report = grad_check(
        std::slice::from_ref(&a),
        |g, v| probe(g, hyper::exp_origin(g, v[0], kk), 2),
        GRAD_TOL,
    )
    .unwrap();
    assert!(report.passed, "exp_origin: {report:?}");
    let report = grad_check(
        &[a],
        |g, v| {
            probe(
                g,
                hyper::centroid_groups(g, hyper::lift(g, v[0], kk), 2, kk),
                3,
            )
        },
        GRAD_TOL,
    )
    .unwrap();
    assert!(report.passed, "centroid_groups: {report:?}");
}

#[test]
fn distance_to_origin_gradient_matches_finite_differences() {
    let kk = k(1.0);
    let report = grad_check(
        &[Tensor::row_vector(&[0.3, -0.8, 1.1])],
        |g, v| {
            let x = hyper::lift(g, v[0], kk);
            let o = g.constant(points_to_tensor(&[LorentzPoint::origin(3, kk)]));
            g.sum_all(hyper::sq_dist_rows(g, x, o, kk))
        },
        GRAD_TOL,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn corrupted_gradient_fails_the_check() {
    use latte::autodiff::gradcheck::{analytic_gradients, compare, numeric_gradients};
    let kk = k(1.0);
    let f = |g: &Graph, v: &[Var]| probe(g, hyper::exp_origin(g, v[0], kk), 5);
    let x = [random_tensor(&mut rng(5), 2, 3, 1.0)];
    let mut analytic = analytic_gradients(&x, &f).unwrap();
    let numeric = numeric_gradients(&x, &f, 1e-5);
    assert!(compare(&analytic, &numeric, GRAD_TOL).passed);
    analytic[0].data_mut()[1] += 0.1;
    assert!(!compare(&analytic, &numeric, GRAD_TOL).passed);
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let p = projection(PredecoderAdapter::LowRank, 0.5, 1);
    let kk = k(1.0);
    let g = Graph::new();
    let routing = SubjectRows::from_trials(&[0, 1], 1);
    let y = p
        .forward(
            &g,
            g.input(points_tensor(&mut rng(2), 2, 4, kk, 1.0)),
            &routing,
            AdapterPolicy::Strict,
            kk,
        )
        .unwrap();
    let grads = g.backward(probe(&g, y, 3)).unwrap();
    assert!(grads.for_param(&p.weight.name).is_none());
    assert!(grads.for_param("pd.lora.s0.q").is_some());
}
