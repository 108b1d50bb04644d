mod common;

use std::sync::Arc;

use common::*;
use num_complex::Complex;
use proptest::prelude::*;
use rand::Rng;
use shapedyn::kinematics::*;
use shapedyn::quantum::*;
use shapedyn::subsystems::*;

type C = Complex<f64>;

fn split4() -> SystemSplit {
    SystemSplit::new(vec![0], vec![1.0; 4]).unwrap()
}

fn frame_a() -> EnvironmentFrame {
    EnvironmentFrame::new(vec![[-1.0, 0.1, 0.0], [1.1, -0.1, 0.2], [0.1, 1.7, -0.1]]).unwrap()
}

fn frame_b() -> EnvironmentFrame {
    EnvironmentFrame::bookstein(C::new(0.5, 1.2), &[]).unwrap()
}

#[test]
fn split_validation() {
    assert!(SystemSplit::new(vec![0, 1], vec![1.0; 4]).is_err());
    assert!(SystemSplit::new(vec![], vec![1.0; 4]).is_err());
    assert!(SystemSplit::new(vec![0], vec![1.0, 1.0, -1.0, 1.0]).is_err());
    assert!(EnvironmentFrame::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).is_err());
    let s = split4();
    assert_eq!(s.environment, vec![1, 2, 3]);
    let cfg = s.assemble(&frame_a(), &[0.3, -0.2, 0.5]).unwrap();
    let (x, f) = s.split(&cfg);
    assert_eq!(x, vec![0.3, -0.2, 0.5]);
    assert_eq!(f, frame_a());
}

#[test]
fn canonical_frame_is_bookstein() {
    let (t, z) = frame_a().canonical().unwrap();
    let moved = frame_a().transformed(&t);
    let want = [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [z.re, z.im, 0.0]];
    for (p, w) in moved.positions.iter().zip(want) {
        for k in 0..3 {
            assert!((p[k] - w[k]).abs() < 1e-12, "{p:?} vs {w:?}");
        }
    }
    assert!(z.im > 0.0);
}

#[test]
fn product_state_conditional_factorizes() {
    let s = split4();
    let mu = [0.2, -0.1, 0.4];
    let psi = move |x: &[f64]| (-(0..3).map(|k| (x[k] - mu[k]).powi(2)).sum::<f64>() / 2.0).exp();
    let wf = WaveFunctionModel::new(
        Arc::new(move |q: &MassedConfiguration<f64>| {
            let c = q.coords();
            let env: f64 = c[3..].iter().map(|v| v * v).sum();
            C::new(psi(&c[..3]), 0.0) * C::new(0.0, 0.3 * env).exp() * (-env / 4.0).exp()
        }),
        Gauge::Schrodinger,
        1.0,
        &[],
    )
    .unwrap();
    let xs = [[0.0, 0.0, 0.0], [0.5, -0.3, 1.0], [-1.0, 0.7, 0.2]];
    for frame in [frame_a(), frame_b()] {
        let c0 = conditional_wavefunction(&wf, &s, &frame, &xs[0]).unwrap() / psi(&xs[0]);
        for x in &xs[1..] {
            let c = conditional_wavefunction(&wf, &s, &frame, x).unwrap() / psi(x);
            assert!((c - c0).norm() < 1e-12 * c0.norm());
        }
    }
}

#[test]
fn conditional_is_frame_covariant_for_invariant_states() {
    let s = split4();
    let mut r = rng(5);
    for kind in [SubsystemState::Product, SubsystemState::Entangled] {
        let wf = subsystem_test_state(&s, kind).unwrap();
        for _ in 0..20 {
            let t = random_similarity(&mut r);
            let x = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let a = conditional_wavefunction(&wf, &s, &frame_a(), &x).unwrap();
            let b = conditional_wavefunction(&wf, &s, &frame_a().transformed(&t), &t.apply_point(x)).unwrap();
            assert!((a - b).norm() <= 1e-8 * a.norm().max(1e-3), "{a} vs {b}");
        }
    }
}

#[test]
fn entangled_conditional_depends_on_environment() {
    let s = split4();
    let model = ModelKind::InverseL2.model();
    let probe = ProbeBox::cube(3, -3.0, 3.0, 24).unwrap();
    let other = EnvironmentFrame::bookstein(C::new(0.3, 3f64.sqrt()), &[]).unwrap();
    let base = EnvironmentFrame::bookstein(C::new(0.0, 3f64.sqrt()), &[]).unwrap();
    let sup = |kind| {
        let wf = subsystem_test_state(&s, kind).unwrap();
        let a = conditional_born_distribution(Gauge::G1, &model, &wf, &s, &base, &probe, JacobianRoute::Invariant).unwrap();
        let b = conditional_born_distribution(Gauge::G1, &model, &wf, &s, &other, &probe, JacobianRoute::Invariant).unwrap();
        let peak = a.values.iter().fold(0.0f64, |m, v| m.max(*v));
        a.values.iter().zip(&b.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / peak
    };
    let (p, e) = (sup(SubsystemState::Product), sup(SubsystemState::Entangled));
    // The product state still moves a little through the metric weight f^{n/2}/J_B.
    assert!(e > 0.1 && p < 0.2 * e, "product {p:e}, entangled {e:e}");
}

#[test]
fn gaussian_table_matches_analytic_density() {
    let s = split4();
    let c = [0.3, -0.4, 0.1];
    let wf = WaveFunctionModel::new(
        Arc::new(move |q: &MassedConfiguration<f64>| {
            let x = q.coords();
            let r2: f64 = (0..3).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>() + x[3..].iter().map(|v| v * v).sum::<f64>();
            C::new((-r2 / 2.0).exp(), 0.0)
        }),
        Gauge::Schrodinger,
        1.0,
        &[],
    )
    .unwrap();
    let probe = ProbeBox::new(c.iter().map(|v| v - 7.0).collect(), c.iter().map(|v| v + 7.0).collect(), 40).unwrap();
    let table =
        conditional_born_distribution(Gauge::Schrodinger, &ConformalModel::Constant(1.0), &wf, &s, &frame_b(), &probe, JacobianRoute::Invariant)
            .unwrap();
    assert!((table.total_mass() - 1.0).abs() < 1e-10);
    let norm = std::f64::consts::PI.powf(-1.5);
    let worst = (0..probe.len()).fold(0.0f64, |m, i| {
        let x = probe.midpoint(i);
        let exact = norm * (-(0..3).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>()).exp();
        m.max((table.values[i] - exact).abs())
    });
    assert!(worst < 1e-6, "sup error {worst:e}");
    // Marginal CDF of the first coordinate against the error function.
    let cdf = table.marginal_cdf(0);
    for x in [-1.0, 0.3, 1.2] {
        let exact = shapedyn::stats::normal_cdf(x, c[0], 0.5f64.sqrt());
        assert!((cdf.at(x) - exact).abs() < 1e-3, "{x}: {} vs {exact}", cdf.at(x));
    }
}

#[test]
fn zero_conditional_is_reported() {
    let s = split4();
    let wf = WaveFunctionModel::new(Arc::new(|_: &MassedConfiguration<f64>| C::new(0.0, 0.0)), Gauge::G3, 1.0, &[]).unwrap();
    let probe = ProbeBox::cube(3, -1.0, 1.0, 4).unwrap();
    let err = conditional_born_distribution(Gauge::G3, &ModelKind::InverseL2.model(), &wf, &s, &frame_a(), &probe, JacobianRoute::Invariant);
    assert_eq!(err.unwrap_err(), shapedyn::Error::ZeroConditional);
}

#[test]
fn conditional_distribution_agrees_across_gauges() {
    let s = split4();
    let probe = ProbeBox::cube(3, -2.5, 2.5, 16).unwrap();
    let route = JacobianRoute::Invariant;
    for kind in [ModelKind::InverseL2, ModelKind::Canonical, ModelKind::GravityLike] {
        let model = kind.model();
        let g1 = subsystem_test_state(&s, SubsystemState::Entangled).unwrap();
        let g2 = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::G2, &model, route).unwrap();
        let g3 = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::G3, &model, route).unwrap();
        let t1 = conditional_born_distribution(Gauge::G1, &model, &g1, &s, &frame_a(), &probe, route).unwrap();
        for (g, wf) in [(Gauge::G2, &g2), (Gauge::G3, &g3)] {
            let t = conditional_born_distribution(g, &model, wf, &s, &frame_a(), &probe, route).unwrap();
            let d = t1.values.iter().zip(&t.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(d < 1e-8, "{kind:?} {g}: {d:e}");
        }
    }
}

#[test]
fn cdf_grid_interpolates_between_nodes() {
    // Conditional law of a Gaussian whose mean moves linearly with the key.
    let probe = ProbeBox::cube(1, -8.0, 8.0, 400).unwrap();
    let table = |key: &[f64]| {
        let values: Vec<f64> = (0..probe.len())
            .map(|i| {
                let x = probe.midpoint(i)[0];
                (-(x - key[0]).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
            })
            .collect();
        Ok(ConditionalTable { probe: probe.clone(), values })
    };
    let grid = ConditionalCdfGrid::build(vec![linspace(-1.0, 1.0, 3)], table).unwrap();
    assert!(grid.covers(&[0.5]) && !grid.covers(&[1.5]));
    let at_node = grid.cdf(&[0.0], 0, 0.7);
    assert!((at_node - shapedyn::stats::normal_cdf(0.7, 0.0, 1.0)).abs() < 1e-5);
    let mid = grid.cdf(&[0.5], 0, 0.7);
    let lin = 0.5 * (shapedyn::stats::normal_cdf(0.7, 0.0, 1.0) + shapedyn::stats::normal_cdf(0.7, 1.0, 1.0));
    assert!((mid - lin).abs() < 1e-5);
}

#[test]
fn monte_carlo_check_product_passes_and_wrong_frame_fails() {
    let s = split4();
    let model = ModelKind::InverseL2.model();
    let domain = UniverseDomain { system_radius: 4.0, environment_scale: (0.8, 1.6) };
    let probe = ProbeBox::cube(3, -3.2, 3.6, 34).unwrap();
    let wf = subsystem_test_state(&s, SubsystemState::Product).unwrap();
    let opts = ConditionalCheckOptions::new(20_000, 3, probe);
    let good = monte_carlo_conditional_check(Gauge::G1, &model, &wf, &s, &domain, &opts).unwrap();
    assert!(good.passed, "{:?}", good.pooled);
    assert!(good.excluded_fraction <= 0.05);
    let bad = monte_carlo_conditional_check(Gauge::G1, &model, &wf, &s, &domain, &ConditionalCheckOptions { wrong_frame: true, ..opts }).unwrap();
    assert!(!bad.passed && bad.aggregate_p < 1e-6, "{}", bad.aggregate_p);
}

#[test]
fn monte_carlo_check_rejects_unsupported_setups() {
    let model = ModelKind::InverseL2.model();
    let domain = UniverseDomain { system_radius: 4.0, environment_scale: (0.8, 1.6) };
    let probe = ProbeBox::cube(3, -3.0, 3.0, 8).unwrap();
    let s5 = SystemSplit::new(vec![0, 4], vec![1.0; 5]).unwrap();
    let wf = subsystem_test_state(&split4(), SubsystemState::Product).unwrap();
    assert!(monte_carlo_conditional_check(Gauge::G1, &model, &wf, &s5, &domain, &ConditionalCheckOptions::new(100, 1, probe.clone())).is_err());
    let g3 = gauge_transform_wavefunction(&wf, Gauge::G1, Gauge::G3, &model, JacobianRoute::Invariant).unwrap();
    assert!(monte_carlo_conditional_check(Gauge::G3, &model, &g3, &split4(), &domain, &ConditionalCheckOptions::new(100, 1, probe)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conditional_tables_are_normalized(re in -1.0f64..1.0, im in 0.4f64..2.5, entangled: bool) {
        let s = split4();
        let kind = if entangled { SubsystemState::Entangled } else { SubsystemState::Product };
        let wf = subsystem_test_state(&s, kind).unwrap();
        let frame = EnvironmentFrame::bookstein(C::new(re, im), &[]).unwrap();
        let probe = ProbeBox::cube(3, -3.0, 3.0, 10).unwrap();
        let t = conditional_born_distribution(Gauge::G1, &ModelKind::InverseL2.model(), &wf, &s, &frame, &probe, JacobianRoute::Invariant).unwrap();
        prop_assert!((t.total_mass() - 1.0).abs() < 1e-10);
        prop_assert!(t.values.iter().all(|v| *v >= 0.0));
        let cdf = t.marginal_cdf(1);
        prop_assert!(cdf.at(-10.0) == 0.0 && (cdf.at(10.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_frame_is_similarity_invariant(seed in 0u64..1000) {
        let mut r = rng(seed);
        let t = random_similarity(&mut r);
        let (_, z) = frame_a().canonical().unwrap();
        let (_, z2) = frame_a().transformed(&t).canonical().unwrap();
        prop_assert!((z - z2).norm() < 1e-9);
    }
}
