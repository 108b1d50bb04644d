use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use shapedyn::bohm::{BohmOptions, WaveFamily};
use shapedyn::fd::FdScheme;
use shapedyn::kinematics::*;
use shapedyn::paths::*;
use shapedyn::quantum::Gauge;
use shapedyn::stats::ks_two_sample;

fn cfg(q: Vec<f64>) -> MassedConfiguration<f64> {
    let n = q.len() / 3;
    MassedConfiguration::from_flat(q, vec![1.0; n]).unwrap()
}

/// Straight line in the direction of coordinate 0, from `x0` to `x1`, other coordinates fixed.
fn line(x0: f64, x1: f64, rest: &[f64], steps: usize) -> GeometricPath {
    let pts = (0..=steps)
        .map(|k| {
            let mut q = vec![x0 + (x1 - x0) * k as f64 / steps as f64];
            q.extend_from_slice(rest);
            cfg(q)
        })
        .collect();
    GeometricPath::new(pts, "line").unwrap()
}

fn rest(y: f64) -> Vec<f64> {
    vec![y, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
}

#[test]
fn path_and_time_function_basics() {
    assert!(GeometricPath::new(vec![cfg(vec![0.0; 9])], "one").is_err());
    let p = line(0.0, 1.0, &rest(0.0), 10);
    assert!((p.max_step() - 0.1).abs() < 1e-12);
    assert!(p.check_step_bound(0.2).is_ok() && p.check_step_bound(0.05).is_err());
    let tau = TimeFunction::coordinate(0, 2.0).unwrap();
    assert_eq!(tau.eval(&p.points[10]), 0.5);
    assert!(tau.monotone_on(&p));
    let mut back = p.clone();
    back.points.push(p.points[5].clone());
    assert!(!tau.monotone_on(&back));
    assert!(TimeFunction::coordinate(0, 0.0).is_err());
}

#[test]
fn uniform_flow_crossings_follow_section_area() {
    let mut r = ChaCha20Rng::seed_from_u64(3);
    let ys: Vec<f64> = (0..20_000).map(|_| r.gen_range(0.0..1.0)).collect();
    let paths: Vec<GeometricPath> = ys.iter().map(|&y| line(-1.0, 1.0, &rest(y), 7)).collect();
    let tau = TimeFunction::coordinate(0, 1.0).unwrap();
    let cm = crossing_measure(&paths, &vec![1.0; paths.len()], &tau, 0.3).unwrap();
    assert_eq!(cm.crossings.len(), paths.len());
    assert_eq!(cm.multi_crossing_paths, 0);
    assert!(cm.warnings.is_empty());
    for c in cm.crossings.iter().take(10) {
        assert!((c.config.coords()[0] - 0.3).abs() < 1e-12);
    }
    for (a, b) in [(0.0, 0.25), (0.1, 0.7), (0.5, 1.0)] {
        let p = cm.probability(|q| (a..b).contains(&q.coords()[1]));
        assert!((p - (b - a)).abs() < 4.0 * ((b - a) * (1.0 - b + a) / 20_000.0).sqrt(), "{p}");
    }
}

#[test]
fn weighted_and_recrossing_paths() {
    let tau = TimeFunction::coordinate(0, 1.0).unwrap();
    let zigzag = GeometricPath::new(vec![cfg(vec![-1.0; 9]), cfg(vec![1.0; 9]), cfg(vec![-1.0; 9]), cfg(vec![1.0; 9])], "zigzag").unwrap();
    let backward = line(1.0, -1.0, &rest(0.5), 4);
    let paths = vec![line(-1.0, 1.0, &rest(0.2), 4), line(-1.0, 1.0, &rest(0.8), 4), zigzag, backward];
    let cm = crossing_measure(&paths, &[1.0, 3.0, 1.0, 1.0], &tau, 0.1).unwrap();
    assert_eq!(cm.crossings.len(), 2);
    assert_eq!(cm.multi_crossing_paths, 1);
    assert_eq!(cm.recrossings, 2);
    assert!(cm.warnings[0].starts_with("NonTransversal"));
    assert!((cm.probability(|q| q.coords()[1] > 0.5) - 0.75).abs() < 1e-12);
    assert!(crossing_measure(&paths, &[1.0], &tau, 0.1).is_err());
}

#[test]
fn straight_line_flow_is_associated_with_arc_time() {
    let mut r = ChaCha20Rng::seed_from_u64(9);
    let tau = TimeFunction::coordinate(0, 1.0).unwrap();
    // μ: uniform on the unit square in (q0, q1); ℙ: the lines q1 = const, q1 uniform.
    let mu: Vec<MassedConfiguration<f64>> = (0..40_000)
        .map(|_| {
            let mut q = vec![r.gen_range(0.0..1.0)];
            q.extend(rest(r.gen_range(0.0..1.0)));
            cfg(q)
        })
        .collect();
    let paths: Vec<GeometricPath> = (0..5_000).map(|_| line(-0.1, 1.1, &rest(r.gen_range(0.0..1.0)), 24)).collect();
    let upper = |q: &MassedConfiguration<f64>| q.coords()[1] > 0.6;
    let corner = |q: &MassedConfiguration<f64>| q.coords()[0] > 0.5 && q.coords()[1] < 0.3;
    let regions = [Region { name: "upper".into(), contains: &upper, flow_invariant: true }, Region { name: "corner".into(), contains: &corner, flow_invariant: false }];
    let transport = |q: &MassedConfiguration<f64>, t: f64| {
        let mut c = q.clone();
        c.coords_mut()[0] = t;
        Ok(c)
    };
    let rep = path_measure_association_check(&mu, &paths, &tau, (0.0, 1.0), &regions, [0.3, 0.7], 0.02, &transport).unwrap();
    assert!(rep.passed, "{rep:#?}");
    assert_eq!(rep.monotonicity_violations, 0);
    assert!((rep.time_in_region[0].right - 0.4).abs() < 0.03);
    assert!((rep.time_in_region[1].right - 0.15).abs() < 0.03);

    // A flow that drifts in q1 carries a different path measure: the identity fails.
    let slanted: Vec<GeometricPath> = (0..5_000)
        .map(|_| {
            let y0 = r.gen_range(0.0..1.0);
            let pts = (0..=24)
                .map(|k| {
                    let s = -0.1 + 1.2 * k as f64 / 24.0;
                    let mut q = vec![s];
                    q.extend(rest(y0 * (1.0 - 0.5 * s)));
                    cfg(q)
                })
                .collect();
            GeometricPath::new(pts, "slanted").unwrap()
        })
        .collect();
    let bad = path_measure_association_check(&mu, &slanted, &tau, (0.0, 1.0), &regions, [0.3, 0.7], 0.02, &transport).unwrap();
    assert!(!bad.passed);
}

#[test]
fn association_rejects_bad_slabs_and_counts_violations() {
    let tau = TimeFunction::coordinate(0, 1.0).unwrap();
    let mu = vec![cfg(vec![0.5; 9])];
    let paths = vec![line(-0.1, 1.1, &rest(0.5), 4), line(1.1, -0.1, &rest(0.5), 4)];
    let all = |_: &MassedConfiguration<f64>| true;
    let regions = [Region { name: "all".into(), contains: &all, flow_invariant: true }];
    let transport = |q: &MassedConfiguration<f64>, _: f64| Ok(q.clone());
    assert!(path_measure_association_check(&mu, &paths, &tau, (1.0, 0.0), &regions, [0.3, 0.7], 0.1, &transport).is_err());
    assert!(path_measure_association_check(&mu, &paths, &tau, (0.0, 1.0), &regions, [0.3, 1.7], 0.1, &transport).is_err());
    let mut zig = paths[0].clone();
    zig.points.swap(1, 3);
    let rep = path_measure_association_check(&mu, &[paths[0].clone(), zig], &tau, (0.0, 1.0), &regions, [0.3, 0.7], 0.5, &transport).unwrap();
    assert_eq!(rep.monotonicity_violations, 1);
}

/// Exact draws from `|ψ_S|²` of the product toy with the clock coordinate set to `y1`:
/// `r² ~ Γ(2)` and a uniform angle in the (x1, x2) plane, `y2² ~ Γ(3/2)` with a random
/// sign, and the remaining coordinates normal with variance 1/2.
fn toy_draw(r: &mut ChaCha20Rng, y1: f64) -> MassedConfiguration<f64> {
    let rad = Gamma::new(2.0f64, 1.0).unwrap().sample(r).sqrt();
    let phi = r.gen_range(0.0..std::f64::consts::TAU);
    let y2 = Gamma::new(1.5f64, 1.0).unwrap().sample(r).sqrt() * if r.gen::<bool>() { 1.0 } else { -1.0 };
    let g = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
    let mut q = vec![rad * phi.cos(), rad * phi.sin(), g.sample(r), y1, y2];
    q.extend((0..7).map(|_| g.sample(r)));
    cfg(q)
}

/// `∫_a^∞ w` for the x1-marginal `w(x) = (x² + 1/2) e^{-x²} / √π`, Simpson's rule.
fn x1_tail(a: f64) -> f64 {
    let (b, n) = (a.max(0.0) + 12.0, 4000);
    let h = (b - a) / n as f64;
    let w = |x: f64| (x * x + 0.5) * (-x * x).exp() / std::f64::consts::PI.sqrt();
    let inner: f64 = (1..n).map(|i| w(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (w(a) + inner + w(b)) * h / 3.0
}

fn toy_paths(toy: &StationaryToy, n: usize, seed: u64, target: f64) -> Vec<GeometricPath> {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    let starts: Vec<MassedConfiguration<f64>> = (0..n).map(|_| toy_draw(&mut r, 0.0)).collect();
    let model = toy.model();
    let family = WaveFamily::stationary(&toy.schrodinger_wf());
    let opts = BohmOptions { scheme: FdScheme::new(1e-4, 2, false).unwrap(), ..Default::default() };
    let tau = toy.clock();
    starts.par_iter().map(|q| trace_to_level(Gauge::Schrodinger, &model, &family, q, &tau, target, 0.02, 1000, &opts).unwrap()).collect()
}

#[test]
fn toy_section_measure_matches_quadrature_and_is_stationary() {
    let toy = StationaryToy::new(2.0, 0.0, 0.3).unwrap();
    let paths = toy_paths(&toy, 100_000, 1, 0.12);
    let tau = toy.clock();
    let w = vec![1.0; paths.len()];
    let a = crossing_measure(&paths, &w, &tau, 0.05).unwrap();
    let b = crossing_measure(&paths, &w, &tau, 0.1).unwrap();
    assert_eq!(a.crossings.len(), paths.len());
    assert_eq!(a.multi_crossing_paths + a.recrossings, 0);
    let oracle = [
        ("x1 > 0.5", x1_tail(0.5)),
        ("x1 > -0.3", x1_tail(-0.3)),
        ("|x12| > 1", 2.0 / std::f64::consts::E),
    ];
    for (cm, level) in [(&a, 0.05), (&b, 0.1)] {
        for ((name, want), pred) in oracle.iter().zip([
            (|q: &MassedConfiguration<f64>| q.coords()[0] > 0.5) as fn(&MassedConfiguration<f64>) -> bool,
            |q| q.coords()[0] > -0.3,
            |q| q.coords()[0].hypot(q.coords()[1]) > 1.0,
        ]) {
            let got = cm.probability(pred);
            assert!((got - want).abs() < 0.02 * want, "{name} at {level}: {got} vs {want}");
        }
    }
    // Parallel sections carry the same distribution.
    for k in [0, 1, 2, 4] {
        let xa: Vec<f64> = a.crossings.iter().map(|c| c.config.coords()[k]).collect();
        let xb: Vec<f64> = b.crossings.iter().map(|c| c.config.coords()[k]).collect();
        let ks = ks_two_sample(&xa, &xb);
        assert!(ks.p_value > 0.01, "coordinate {k}: {ks:?}");
    }
}

#[test]
fn toy_flow_is_associated_with_clock_time() {
    let toy = StationaryToy::new(2.0, 0.0, 0.3).unwrap();
    let tau = toy.clock();
    let mut r = ChaCha20Rng::seed_from_u64(17);
    // μ restricted to the slab 0 ≤ τ ≤ 0.4: the clock coordinate is uniform there.
    let mu: Vec<MassedConfiguration<f64>> = (0..20_000)
        .map(|_| {
            let y1 = toy.k * r.gen_range(0.0..0.4);
            toy_draw(&mut r, y1)
        })
        .collect();
    let paths = toy_paths(&toy, 4_000, 2, 0.45);
    let model = toy.model();
    let family = WaveFamily::stationary(&toy.schrodinger_wf());
    let opts = BohmOptions { scheme: FdScheme::new(1e-4, 2, false).unwrap(), ..Default::default() };
    let transport = |q: &MassedConfiguration<f64>, t: f64| flow_to_level(Gauge::Schrodinger, &model, &family, q, &tau, t, 0.02, &opts);
    let x1 = |q: &MassedConfiguration<f64>| q.coords()[0] > 0.5;
    let ring = |q: &MassedConfiguration<f64>| q.coords()[0].hypot(q.coords()[1]) > 1.0;
    let y2 = |q: &MassedConfiguration<f64>| q.coords()[StationaryToy::KEY] > 0.5;
    let regions = [
        Region { name: "x1 > 0.5".into(), contains: &x1, flow_invariant: false },
        Region { name: "|x12| > 1".into(), contains: &ring, flow_invariant: true },
        Region { name: "y2 > 0.5".into(), contains: &y2, flow_invariant: true },
    ];
    let rep = path_measure_association_check(&mu, &paths, &tau, (0.0, 0.4), &regions, [0.1, 0.3], 0.02, &transport).unwrap();
    assert!(rep.passed, "{rep:#?}");
    assert_eq!(rep.level_independence.len(), 2);
}

#[test]
fn toy_state_is_stationary_with_environment_clock() {
    let scheme = FdScheme::new(1e-3, 4, false).unwrap();
    let mut r = ChaCha20Rng::seed_from_u64(4);
    for c in [0.0, 1.5] {
        let toy = StationaryToy::new(2.0, c, 0.3).unwrap();
        for _ in 0..20 {
            let y1 = r.gen_range(-1.0..1.0);
            let q = toy_draw(&mut r, y1);
            let res = toy.stationarity_residual(&q, &scheme).unwrap();
            assert!(res < 1e-6, "{res:e}");
        }
        let split = toy.split();
        let probes = [split.assemble(&toy.frame(0.2, 0.7), &[0.1, 0.2, 0.3]).unwrap()];
        assert_eq!(toy.clock().system_dependence(&split, &probes, 0.5), 0.0);
    }
    // A clock reading the system is rejected as a time function of the environment.
    let toy = StationaryToy::new(2.0, 0.0, 0.3).unwrap();
    let sys = TimeFunction::new(Arc::new(|q: &MassedConfiguration<f64>| q.coords()[0] + q.coords()[3]));
    let probes = [toy.split().assemble(&toy.frame(0.2, 0.7), &[0.1, 0.2, 0.3]).unwrap()];
    assert!(sys.system_dependence(&toy.split(), &probes, 0.5) > 0.4);
    assert!(StationaryToy::new(0.0, 0.0, 0.0).is_err());
    assert!(toy.wf(Gauge::G1).is_err());
}

#[test]
fn stationary_check_passes_and_wrong_cell_control_fails() {
    let opts = StationaryCheckOptions::new(4_000, 5);
    let product = stationary_conditional_check(&StationaryToy::new(2.0, 0.0, 0.3).unwrap(), &opts).unwrap();
    assert!(product.passed, "{product:#?}");
    assert!(product.current_max_rel < 1e-6);
    let entangled = stationary_conditional_check(&StationaryToy::new(2.0, 1.5, 0.3).unwrap(), &opts).unwrap();
    assert!(entangled.passed, "{entangled:#?}");
    assert!(entangled.gauge3.wrong_cell_aggregate_p < 1e-3 && entangled.schrodinger.wrong_cell_aggregate_p < 1e-3);
    for route in [&entangled.gauge3, &entangled.schrodinger] {
        assert_eq!(route.failed_paths, 0);
        assert_eq!(route.clock_violation_fraction, 0.0);
    }
}
