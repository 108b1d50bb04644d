mod common;

use std::sync::Arc;

use common::*;
use num_complex::Complex;
use shapedyn::bohm::*;
use shapedyn::bundle::*;
use shapedyn::fd::FdScheme;
use shapedyn::kinematics::*;
use shapedyn::quantum::*;
use shapedyn::sampling::{Bounds, MetropolisOptions};
use shapedyn::stats::{ks_one_sample, normal_cdf};

type C = Complex<f64>;

fn scheme4() -> FdScheme<f64> {
    FdScheme::new(1e-3, 4, false).unwrap()
}

fn vmax(v: &TangentVector<f64>) -> f64 {
    v.components.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[test]
fn real_wave_function_has_zero_velocity() {
    let wf = WaveFunctionModel::new(Arc::new(|q: &MassedConfiguration<f64>| C::from((-scale_moment(q)).exp())), Gauge::G3, 1.0, &[]).unwrap();
    let v = bohm_velocity(Gauge::G3, &ModelKind::GravityLike.model(), &wf, &equilateral(), &scheme4()).unwrap();
    assert_eq!(vmax(&v), 0.0);
}

#[test]
fn nodes_are_reported() {
    let wf = WaveFunctionModel::new(Arc::new(|q: &MassedConfiguration<f64>| C::new(q.coords()[0] - 1.0, 0.0)), Gauge::Schrodinger, 1.0, &[]).unwrap();
    let err = bohm_velocity(Gauge::Schrodinger, &ConformalModel::Constant(1.0), &wf, &equilateral(), &scheme4()).unwrap_err();
    assert!(matches!(err, shapedyn::Error::NodalPoint { .. }));
}

#[test]
fn velocities_agree_across_gauges_and_are_horizontal() {
    let mut r = rng(31);
    let route = JacobianRoute::Invariant;
    for kind in ModelKind::ALL {
        let model = kind.model();
        let cfg = random_config(&mut r, 3);
        let g1 = invariant_wf(1, std::slice::from_ref(&cfg));
        let g2 = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::G2, &model, route).unwrap();
        let g3 = gauge_transform_wavefunction(&g2, Gauge::G2, Gauge::G3, &model, route).unwrap();
        let v1 = bohm_velocity(Gauge::G1, &model, &g1, &cfg, &scheme4()).unwrap();
        let v2 = bohm_velocity(Gauge::G2, &model, &g2, &cfg, &scheme4()).unwrap();
        let v3 = bohm_velocity(Gauge::G3, &model, &g3, &cfg, &scheme4()).unwrap();
        let scale = vmax(&v1);
        for i in 0..9 {
            assert!((v1.components[i] - v2.components[i]).abs() < 1e-6 * scale, "{kind:?}");
            assert!((v1.components[i] - v3.components[i]).abs() < 1e-6 * scale, "{kind:?}");
        }
        let vn = mass_metric_inner(&cfg, &v1, &v1).unwrap().sqrt();
        for gen in vertical_generators(&cfg).generators {
            let gn = mass_metric_inner(&cfg, &gen, &gen).unwrap().sqrt();
            assert!(mass_metric_inner(&cfg, &v1, &gen).unwrap().abs() < 1e-8 * vn * gn, "{kind:?}");
        }
        // Schrödinger-gauge velocity is f times the gauge-3 velocity.
        let s = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::Schrodinger, &model, route).unwrap();
        let vs = bohm_velocity(Gauge::Schrodinger, &model, &s, &cfg, &scheme4()).unwrap();
        let f = conformal_factor(&model, &cfg).unwrap();
        for i in 0..9 {
            assert!((vs.components[i] - f * v3.components[i]).abs() < 1e-6 * f * scale);
        }
    }
}

#[test]
fn zero_phase_gradient_trajectory_is_constant() {
    let wf = WaveFunctionModel::new(Arc::new(|q: &MassedConfiguration<f64>| C::from_polar((-scale_moment(q)).exp(), 0.3)), Gauge::G3, 1.0, &[]).unwrap();
    let fam = WaveFamily::stationary(&wf);
    let rec = integrate_bohm(Gauge::G3, &ModelKind::InverseL2.model(), &fam, &equilateral(), 0.1, 10, &BohmOptions::default()).unwrap();
    for (a, b) in rec.configs[0].coords().iter().zip(rec.configs.last().unwrap().coords()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gauge_one_and_three_trajectories_share_shapes() {
    let model = ModelKind::GravityLike.model();
    let route = JacobianRoute::Invariant;
    let cfg = random_config(&mut rng(32), 3);
    let g1 = invariant_wf(0, std::slice::from_ref(&cfg));
    let g3 = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::G3, &model, route).unwrap();
    let opts = BohmOptions::default();
    let a = integrate_bohm(Gauge::G1, &model, &WaveFamily::stationary(&g1), &cfg, 0.01, 100, &opts).unwrap();
    let b = integrate_bohm(Gauge::G3, &model, &WaveFamily::stationary(&g3), &cfg, 0.01, 100, &opts).unwrap();
    assert!(a.aborted.is_none() && b.aborted.is_none());
    let moved = (bookstein_shape(&a.configs[100]).unwrap().z - bookstein_shape(&cfg).unwrap().z).norm();
    assert!(moved > 1e-3);
    for (p, q) in a.configs.iter().zip(&b.configs) {
        assert!((bookstein_shape(p).unwrap().z - bookstein_shape(q).unwrap().z).norm() < 1e-7);
    }
}

fn toy_family() -> (WaveFamily<f64>, Vec<f64>, Vec<f64>) {
    let x0: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.4).collect();
    let p0: Vec<f64> = (0..9).map(|i| 1.0 - 0.2 * i as f64).collect();
    (free_gaussian_family(&[1.0, 1.0, 1.0], x0.clone(), p0.clone(), 1.0).unwrap(), x0, p0)
}

#[test]
fn free_packet_solves_schrodinger_and_continuity() {
    let (fam, _, _) = toy_family();
    let model = ConformalModel::Constant(1.0);
    let mut r = rng(33);
    for _ in 0..3 {
        let cfg = MassedConfiguration::with_unit_masses(&random_config(&mut r, 3).positions()).unwrap();
        let t = 0.7;
        // i ∂ψ/∂t = -(1/2) ∇² ψ.
        let dt = 1e-4;
        let dpsi = (fam.at(t + dt).eval(&cfg).unwrap() - fam.at(t - dt).eval(&cfg).unwrap()) / (2.0 * dt);
        let settings = OperatorSettings { scheme: FdScheme::new(1e-3, 2, true).unwrap(), ..Default::default() };
        let lap = shapedyn::fd::flux_divergence(|_| Ok(1.0), |c| fam.at(t).eval(c), &cfg, &settings.scheme).unwrap();
        assert!((C::i() * dpsi + lap * 0.5).norm() < 1e-6 * lap.norm());
        let res = continuity_residual(&model, Gauge::Schrodinger, &fam, t, &cfg, 1e-3, &scheme4(), JacobianRoute::Invariant).unwrap();
        assert!(res.relative() < 1e-5, "{res:?}");
    }
}

#[test]
fn stationary_current_is_divergence_free() {
    let eval = Arc::new(|q: &MassedConfiguration<f64>, _t: f64| {
        let c = q.coords();
        (C::i() * 1.3 * c[0]).exp() * C::new(c[1], c[2]) * (-c[3] * c[3] - 0.5 * c[4] * c[4]).exp()
    });
    let fam = WaveFamily::new(eval, Gauge::Schrodinger, 1.0, &[]).unwrap();
    let cfg = random_config(&mut rng(36), 3);
    let res = continuity_residual(&ConformalModel::Constant(1.0), Gauge::Schrodinger, &fam, 0.0, &cfg, 1e-3, &scheme4(), JacobianRoute::Invariant).unwrap();
    // Compare with the size of a single current component's derivative.
    let c = cfg.coords();
    let scale = (c[1] * c[1] + c[2] * c[2]) * (-2.0 * c[3] * c[3] - c[4] * c[4]).exp();
    assert!(res.residual < 1e-4 * scale, "{res:?}");
}

#[test]
fn rk4_converges_at_fourth_order() {
    let (fam, x0, p0) = toy_family();
    let model = ConformalModel::Constant(1.0);
    let start = MassedConfiguration::with_unit_masses(&[[0.3, -0.2, 0.5], [0.1, 0.8, -0.6], [-0.7, 0.2, 0.4]]).unwrap();
    let t = 1.0;
    // Exact flow: x(t) - x0 - p0 t = (x(0) - x0) σ_t / σ0.
    let stretch = (1.0f64 + 0.25).sqrt();
    let exact: Vec<f64> = (0..9).map(|i| x0[i] + p0[i] * t + (start.coords()[i] - x0[i]) * stretch).collect();
    let err = |steps: usize| {
        let rec = integrate_bohm(Gauge::Schrodinger, &model, &fam, &start, t / steps as f64, steps, &BohmOptions::default()).unwrap();
        rec.configs.last().unwrap().coords().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (e1, e2) = (err(5), err(10));
    let order = (e1 / e2).log2();
    assert!((order - 4.0).abs() < 0.5, "order {order} ({e1}, {e2})");
}

#[test]
fn time_change_matches_schrodinger_gauge_field() {
    let model = ModelKind::InverseSquarePairs.model();
    let route = JacobianRoute::Invariant;
    let cfg = random_config(&mut rng(34), 3);
    let g1 = invariant_wf(2, std::slice::from_ref(&cfg));
    let g3 = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::G3, &model, route).unwrap();
    let s = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::Schrodinger, &model, route).unwrap();
    let opts = BohmOptions::default();
    let tr3 = integrate_bohm(Gauge::G3, &model, &WaveFamily::stationary(&g3), &cfg, 0.01, 200, &opts).unwrap();
    let ts = random_time_change(&model, &tr3).unwrap();
    assert_eq!(ts.configs, tr3.configs);
    for (q, v) in ts.configs.iter().zip(&ts.velocities).step_by(20) {
        let want = bohm_velocity(Gauge::Schrodinger, &model, &s, q, &scheme4()).unwrap();
        for (a, b) in v.components.iter().zip(&want.components) {
            assert!((a - b).abs() < 1e-5 * vmax(&want));
        }
    }
    // Integrated directly in the Schrödinger gauge over the same parameter span.
    let span = *ts.times.last().unwrap();
    let direct = integrate_bohm(Gauge::Schrodinger, &model, &WaveFamily::stationary(&s), &cfg, span / 200.0, 200, &opts).unwrap();
    let h = hausdorff_distance(&tr3.configs, &direct.configs);
    let len = polyline_length(&tr3.configs);
    assert!(h / len.max(1.0) < 1e-4, "hausdorff {h} over length {len}");

    // Constant f: affine reparametrization.
    let flat = ConformalModel::Constant(4.0);
    let tf = random_time_change(&flat, &tr3).unwrap();
    for (a, b) in tf.times.iter().zip(&tr3.times) {
        assert!((a - b / 4.0).abs() < 1e-14);
    }
}

#[test]
fn equilibrium_densities_agree_across_gauges() {
    let mut r = rng(35);
    let route = JacobianRoute::Invariant;
    for kind in ModelKind::ALL {
        let model = kind.model();
        let cfg = random_config(&mut r, 3);
        let g1 = invariant_wf(0, std::slice::from_ref(&cfg));
        let g2 = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::G2, &model, route).unwrap();
        let g3 = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::G3, &model, route).unwrap();
        let s = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::Schrodinger, &model, route).unwrap();
        let d1 = equilibrium_density(Gauge::G1, &model, &g1, &cfg, route).unwrap();
        let d2 = equilibrium_density(Gauge::G2, &model, &g2, &cfg, route).unwrap();
        let d3 = equilibrium_density(Gauge::G3, &model, &g3, &cfg, route).unwrap();
        let ds = equilibrium_density(Gauge::Schrodinger, &model, &s, &cfg, route).unwrap();
        assert!(rel(d1, d2) < 1e-10 && rel(d1, d3) < 1e-10, "{kind:?}");
        let f = conformal_factor(&model, &cfg).unwrap();
        assert!(rel(ds, d3 / f) < 1e-10);
    }
}

#[test]
fn sampler_reproduces_gaussian_marginal() {
    let (fam, x0, _) = toy_family();
    let model = ConformalModel::Constant(1.0);
    let bounds = Bounds::cube(9, 7.0);
    let opts = MetropolisOptions::default();
    let (s, diag) = sample_equilibrium(Gauge::Schrodinger, &model, &fam.at(0.0), &[1.0; 3], &bounds, 100_000, 3, &opts, JacobianRoute::Invariant).unwrap();
    assert!(diag.warnings.is_empty(), "{diag:?}");
    let xs: Vec<f64> = s.iter().map(|c| c.coords()[4]).collect();
    let ks = ks_one_sample(&xs, |x| normal_cdf(x, x0[4], 1.0));
    assert!(ks.p_value > 0.01, "{ks:?} {diag:?}");
    let (again, _) = sample_equilibrium(Gauge::Schrodinger, &model, &fam.at(0.0), &[1.0; 3], &bounds, 1000, 3, &opts, JacobianRoute::Invariant).unwrap();
    let (again2, _) = sample_equilibrium(Gauge::Schrodinger, &model, &fam.at(0.0), &[1.0; 3], &bounds, 1000, 3, &opts, JacobianRoute::Invariant).unwrap();
    assert_eq!(again, again2);
}

#[test]
fn uniform_density_moments() {
    let wf = WaveFunctionModel::new(Arc::new(|_: &MassedConfiguration<f64>| C::new(0.6, 0.8)), Gauge::Schrodinger, 1.0, &[]).unwrap();
    let bounds = Bounds::cube(9, 1.0);
    let (s, _) = sample_equilibrium(Gauge::Schrodinger, &ConformalModel::Constant(1.0), &wf, &[1.0; 3], &bounds, 20_000, 4, &MetropolisOptions::default(), JacobianRoute::Invariant).unwrap();
    // Uniform on [-1, 1]: mean 0, variance 1/3.
    let n = s.len() as f64;
    for i in [0, 5, 8] {
        let mean = s.iter().map(|c| c.coords()[i]).sum::<f64>() / n;
        let var = s.iter().map(|c| c.coords()[i].powi(2)).sum::<f64>() / n - mean * mean;
        assert!(mean.abs() < 3.0 * (1.0 / 3.0 / n).sqrt() * 2.0, "{mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.01, "{var}");
    }
}
