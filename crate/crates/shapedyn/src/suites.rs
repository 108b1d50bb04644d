//! The five verification suites. Each check records the measured quantity, its
//! threshold and the acceptance criterion it belongs to; tables carry the data
//! behind the checks for plotting.

use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bohm::*;
use crate::bundle::*;
use crate::classical::*;
use crate::error::{invalid_param, Result};
use crate::fd::{flux_divergence, FdScheme};
use crate::kinematics::*;
use crate::paths::{stationary_conditional_check, StationaryCheckOptions, StationaryToy};
use crate::quantum::*;
use crate::rng::{stream, StreamRng};
use crate::sampling::{Bounds, MetropolisOptions};
use crate::scalar::{dot3, mat3_det, sub3, Vec3};
use crate::subsystems::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Geometry,
    ClassicalGauge,
    OperatorIdentities,
    Equivariance,
    ConditionalProbability,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Geometry, Suite::ClassicalGauge, Suite::OperatorIdentities, Suite::Equivariance, Suite::ConditionalProbability];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Geometry => "geometry",
            Suite::ClassicalGauge => "classical-gauge",
            Suite::OperatorIdentities => "operator-identities",
            Suite::Equivariance => "equivariance",
            Suite::ConditionalProbability => "conditional-probability",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            Suite::Geometry => "similarity covariance of the conformal factors and the shape Jacobian against its Gram-matrix oracle",
            Suite::ClassicalGauge => "Newton-gauge runs against shape geodesics, and the Jacobi minimizer against the geodesic",
            Suite::OperatorIdentities => "lifted shape Laplacian, gauge-chain intertwinings, PDO recovery and the Schrödinger-gauge identity",
            Suite::Equivariance => "guiding velocities across gauges, the random time change, and equivariance of the equilibrium ensemble",
            Suite::ConditionalProbability => "conditional Born law from equilibrium samples and from stationary crossing measures",
        }
    }

    /// Acceptance criteria covered by the suite.
    pub fn criteria(self) -> &'static [u8] {
        match self {
            Suite::Geometry => &[1, 2],
            Suite::ClassicalGauge => &[3, 4],
            Suite::OperatorIdentities => &[5, 6, 7],
            Suite::Equivariance => &[8, 9],
            Suite::ConditionalProbability => &[10],
        }
    }

    /// Parameters the suite reads.
    pub fn parameters(self) -> &'static [&'static str] {
        match self {
            Suite::Geometry => &["masses", "seed", "points"],
            Suite::ClassicalGauge => &["model", "masses", "seed", "dt", "steps", "arclength"],
            Suite::OperatorIdentities => &["model", "masses", "seed", "h", "points"],
            Suite::Equivariance => &["model", "seed", "dt", "n_samples", "box"],
            Suite::ConditionalProbability => &["model", "seed", "n_samples", "n_paths", "box"],
        }
    }
}

/// Numerical parameters of a suite run. `SuiteParams::defaults` gives the acceptance settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    pub model: ModelKind,
    pub masses: Vec<f64>,
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    pub arclength: f64,
    pub h: f64,
    pub points: usize,
    pub n_samples: usize,
    pub n_paths: usize,
    /// Half-width of the sampling box (equivariance) or radius of the system ball (conditional).
    #[serde(rename = "box")]
    pub box_size: f64,
}

impl SuiteParams {
    pub fn defaults(suite: Suite) -> Self {
        let base = Self {
            model: ModelKind::InverseL2,
            masses: vec![1.0; 3],
            seed: 1,
            dt: 1e-3,
            steps: 10_000,
            arclength: 1.0,
            h: 1e-3,
            points: 30,
            n_samples: 10_000,
            n_paths: 10_000,
            box_size: 7.0,
        };
        match suite {
            Suite::Geometry => Self { points: 200, ..base },
            Suite::ClassicalGauge => base,
            Suite::OperatorIdentities => Self { model: ModelKind::GravityLike, ..base },
            Suite::Equivariance => Self { model: ModelKind::GravityLike, dt: 0.05, seed: 30, ..base },
            Suite::ConditionalProbability => Self { n_samples: 100_000, box_size: 4.0, seed: 11, ..base },
        }
    }

    /// Positivity of every numeric field and a valid mass vector.
    pub fn validate(&self) -> Result<()> {
        let positive = [("dt", self.dt), ("arclength", self.arclength), ("h", self.h), ("box", self.box_size)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid_param(name, format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [("steps", self.steps), ("points", self.points), ("n_samples", self.n_samples), ("n_paths", self.n_paths)] {
            if v == 0 {
                return Err(invalid_param(name, "must be positive"));
            }
        }
        if self.masses.len() < 3 || self.masses.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(invalid_param("masses", "need at least three positive masses"));
        }
        Ok(())
    }

    fn three_body(&self) -> Result<[f64; 3]> {
        <[f64; 3]>::try_from(self.masses.as_slice()).map_err(|_| invalid_param("masses", "the Bookstein-chart checks need exactly three particles"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub value: f64,
    /// `value < threshold` passes, or `value > threshold` when `above` is set.
    pub threshold: f64,
    pub above: bool,
    pub passed: bool,
}

impl Check {
    pub fn below(criterion: u8, name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { criterion, name: name.into(), value, threshold, above: false, passed: value < threshold }
    }

    pub fn above(criterion: u8, name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { criterion, name: name.into(), value, threshold, above: true, passed: value > threshold }
    }

    /// A boolean outcome, recorded as 1 or 0 against the threshold 0.5.
    pub fn holds(criterion: u8, name: impl Into<String>, ok: bool) -> Self {
        Self::above(criterion, name, if ok { 1.0 } else { 0.0 }, 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn criterion_passed(&self, criterion: u8) -> Option<bool> {
        let mut it = self.checks.iter().filter(|c| c.criterion == criterion).peekable();
        it.peek()?;
        Some(it.all(|c| c.passed))
    }

    pub fn failing(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn run_suite(suite: Suite, params: &SuiteParams) -> Result<SuiteReport> {
    params.validate()?;
    let mut report = SuiteReport { suite, checks: Vec::new(), tables: Vec::new() };
    let parts: Vec<(Vec<Check>, Vec<Table>)> = match suite {
        Suite::Geometry => vec![invariance(params)?, jacobian_oracle(params)?],
        Suite::ClassicalGauge => vec![classical_gauge(params)?, jacobi_consistency(params)?],
        Suite::OperatorIdentities => vec![lift_correctness(params)?, intertwinings(params)?, schrodinger_identity(params)?],
        Suite::Equivariance => vec![bohmian_gauges(params)?, equivariance(params)?],
        Suite::ConditionalProbability => vec![conditional_probability(params)?],
    };
    for (c, t) in parts {
        report.checks.extend(c);
        report.tables.extend(t);
    }
    Ok(report)
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn crel(a: Complex<f64>, b: Complex<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

/// Random configuration well away from collinear and coincident ones.
pub fn random_regular_config(rng: &mut StreamRng, masses: &[f64]) -> MassedConfiguration<f64> {
    loop {
        let pos: Vec<Vec3<f64>> =
            masses.iter().map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
        let cfg = MassedConfiguration::new(&pos, masses).expect("positive masses");
        let l2 = scale_moment(&cfg);
        let det = mat3_det(&inertia_tensor(&cfg));
        let min_r2 = (0..pos.len())
            .flat_map(|a| (a + 1..pos.len()).map(move |b| (a, b)))
            .map(|(a, b)| dot3(sub3(pos[a], pos[b]), sub3(pos[a], pos[b])))
            .fold(f64::INFINITY, f64::min);
        if det > 1e-2 * l2.powi(3) && min_r2 > 0.05 * l2 {
            return cfg;
        }
    }
}

pub fn random_similarity(rng: &mut StreamRng) -> SimilarityTransform<f64> {
    let q = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let a = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
    SimilarityTransform::from_quaternion(q, a, rng.gen_range(0.3..3.0))
}

/// Similarity-invariant test function `k` (0, 1, 2) built from pair-distance ratios.
pub fn invariant_test_function(k: usize, probes: &[MassedConfiguration<f64>]) -> Result<WaveFunctionModel<f64>> {
    let c = [0.9, 1.1, 0.7][k % 3];
    let w = [0.4, -0.3, 0.6][k % 3];
    let eval = Arc::new(move |q: &MassedConfiguration<f64>| {
        let l2 = scale_moment(q);
        let r = |a: usize, b: usize| {
            let d = sub3(q.position(a), q.position(b));
            dot3(d, d) / l2
        };
        let (x, y) = (r(0, 1), r(0, 2));
        Complex::new((-(x - c).powi(2)).exp() * (1.0 + w * y), w * x * y)
    });
    WaveFunctionModel::new(eval, Gauge::G1, 0.1, probes)
}

fn invariance(p: &SuiteParams) -> Result<(Vec<Check>, Vec<Table>)> {
    let mut rng = stream(p.seed, "geometry/invariance", 0);
    let mut table = Table::new("invariance", &["model", "max_factor_error", "max_jacobian_error"]);
    let mut checks = Vec::new();
    for (i, kind) in ModelKind::ALL.into_iter().enumerate() {
        let model = kind.model();
        let (mut fe, mut je) = (0.0f64, 0.0f64);
        for _ in 0..p.points {
            let q = random_regular_config(&mut rng, &p.masses);
            let t = random_similarity(&mut rng);
            let moved = apply_similarity(&q, &t);
            let f = conformal_factor(&model, &q)?;
            fe = fe.max((conformal_factor(&model, &moved)? - f / (t.scale * t.scale)).abs() / f);
            je = je.max(rel(shape_jacobian_invariant(&model, &moved)?, shape_jacobian_invariant(&model, &q)?));
        }
        checks.push(Check::below(1, format!("{kind:?}: f(t q) = λ^-2 f(q)"), fe, 1e-10));
        checks.push(Check::below(1, format!("{kind:?}: J_B invariant"), je, 1e-8));
        table.rows.push(vec![i as f64, fe, je]);
    }
    Ok((checks, vec![table]))
}

fn jacobian_oracle(p: &SuiteParams) -> Result<(Vec<Check>, Vec<Table>)> {
    let mut rng = stream(p.seed, "geometry/jacobian", 0);
    let mut table = Table::new("jacobian_ratio", &["model", "min_ratio", "max_ratio", "spread"]);
    let mut checks = Vec::new();
    for (i, kind) in ModelKind::ALL.into_iter().enumerate() {
        let model = kind.model();
        let ratios: Vec<f64> = (0..50)
            .map(|_| {
                let q = random_regular_config(&mut rng, &p.masses);
                Ok(shape_jacobian(&model, &q)? / vertical_volume_density(&model, &q)?)
            })
            .collect::<Result<_>>()?;
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = max_of(ratios.iter().copied());
        checks.push(Check::below(2, format!("{kind:?}: J / sqrt|g_V| spread"), (hi - lo) / hi, 1e-6));
        table.rows.push(vec![i as f64, lo, hi, (hi - lo) / hi]);
    }
    let canonical = max_of((0..50).map(|_| {
        let q = random_regular_config(&mut rng, &p.masses);
        shape_jacobian_invariant(&ConformalModel::Canonical, &q).map_or(f64::INFINITY, |j| (j - 1.0).abs())
    }));
    checks.push(Check::below(2, "Canonical: J_B = 1", canonical, 1e-8));
    Ok((checks, vec![table]))
}

fn equilateral(masses: &[f64]) -> Result<MassedConfiguration<f64>> {
    let s = 3f64.sqrt() / 2.0;
    MassedConfiguration::new(&[[1.0, 0.0, 0.0], [-0.5, s, 0.0], [-0.5, -s, 0.0]], masses)
}

fn classical_gauge(p: &SuiteParams) -> Result<(Vec<Check>, Vec<Table>)> {
    p.three_body()?;
    let r = gauge_equivalence_check(&p.model.model(), &equilateral(&p.masses)?, p.seed, p.dt, p.steps, p.arclength, 1e-3, true)?;
    let mut checks = vec![Check::below(3, "chart distance to the geodesic", r.max_chart_distance, 1e-3)];
    for (name, v) in [("E", r.drift.energy), ("P", r.drift.momentum), ("J", r.drift.angular_momentum), ("D", r.drift.dilational_momentum)] {
        checks.push(Check::below(3, format!("{name} drift"), v, 1e-6));
    }
    checks.push(Check::above(3, "compared arclength", r.arclength, 0.999 * p.arclength));
    let mut table = Table::new("newton_vs_geodesic", &["s", "newton_re", "newton_im", "geodesic_re", "geodesic_im"]);
    table.rows = r.samples.iter().map(|s| s.to_vec()).collect();
    Ok((checks, vec![table]))
}

fn jacobi_consistency(p: &SuiteParams) -> Result<(Vec<Check>, Vec<Table>)> {
    let m = p.three_body()?;
    let model = p.model.model();
    let z0 = ShapePoint::new(0.2, 1.5)?;
    let dir = Complex::new(1.0, -0.4);
    let s = 0.7;
    let dz = dir / chart_speed(&model, &m, z0.z, dir)?;
    let geo = shape_geodesic(&model, &m, z0, dz, 700, s / 700.0)?;
    let z1 = *geo.points.last().expect("non-empty geodesic");
    let jp = jacobi_path_minimize(&model, &m, z0, z1, 63, None, 1.0)?;
    let sg = geo.arclengths(&model, &m)?;
    let knots = &jp.path.points;
    let mut table = Table::new("jacobi_vs_geodesic", &["s", "jacobi_re", "jacobi_im", "geodesic_re", "geodesic_im"]);
    let mut dist: f64 = 0.0;
    for (i, k) in knots.iter().enumerate() {
        let target = s * i as f64 / (knots.len() - 1) as f64;
        let g = geo.at_arclength(&sg, target);
        dist = dist.max((g - k.z).norm());
        table.rows.push(vec![target, k.z.re, k.z.im, g.re, g.im]);
    }
    let checks = vec![
        Check::below(4, "chart distance to the geodesic", dist, 1e-3),
        Check::below(4, "functional vs geodesic length", rel(jp.functional, s), 1e-4),
    ];
    Ok((checks, vec![table]))
}

/// Chart test function for the lift check.
fn chart_function(z: Complex<f64>) -> Complex<f64> {
    Complex::new((-(z - Complex::new(0.2, 0.9)).norm_sqr()).exp(), 0.3 * z.re * z.im)
}

/// Laplace-Beltrami operator of the Bookstein-chart metric, `|G|^{-1/2} ∂_a(|G|^{1/2} G^{ab} ∂_b F)`,
/// by nested central differences.
pub fn chart_laplace_beltrami(
    model: &ConformalModel<f64>,
    masses: &[f64],
    big_f: impl Fn(Complex<f64>) -> Complex<f64>,
    z: Complex<f64>,
) -> Result<Complex<f64>> {
    let metric = |p: Complex<f64>| pullback_shape_metric(model, ShapePoint::new(p.re, p.im)?, masses);
    let flux = |p: Complex<f64>| -> Result<[Complex<f64>; 2]> {
        let d = 1e-4;
        let fx = (big_f(p + Complex::new(d, 0.0)) - big_f(p - Complex::new(d, 0.0))) / (2.0 * d);
        let fy = (big_f(p + Complex::new(0.0, d)) - big_f(p - Complex::new(0.0, d))) / (2.0 * d);
        let g = metric(p)?;
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let s = det.sqrt();
        let inv = [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]];
        Ok([(fx * inv[0][0] + fy * inv[0][1]) * s, (fx * inv[1][0] + fy * inv[1][1]) * s])
    };
    let d = 1e-3;
    let div = (flux(z + Complex::new(d, 0.0))?[0] - flux(z - Complex::new(d, 0.0))?[0]) / (2.0 * d)
        + (flux(z + Complex::new(0.0, d))?[1] - flux(z - Complex::new(0.0, d))?[1]) / (2.0 * d);
    let g = metric(z)?;
    Ok(div / (g[0][0] * g[1][1] - g[0][1] * g[1][0]).sqrt())
}

fn lift_correctness(p: &SuiteParams) -> Result<(Vec<Check>, Vec<Table>)> {
    let m = p.three_body()?;
    let model = p.model.model();
    let mut rng = stream(p.seed, "operators/lift", 0);
    let probe = bookstein_representative(Complex::new(0.3, 1.0), &m)?;
    let eval = Arc::new(|q: &MassedConfiguration<f64>| match bookstein_shape(q) {
        Ok(z) => chart_function(z.z),
        Err(_) => Complex::new(f64::NAN, f64::NAN),
    });
    let wf = WaveFunctionModel::new(eval, Gauge::G1, 0.1, &[probe])?;
    let scheme = FdScheme::new(p.h, 2, false)?;
    let mut table = Table::new("lift_vs_chart", &["z_re", "z_im", "fiber", "rel_error", "h_agreement"]);
    let (mut worst, mut worst_h) = (0.0f64, 0.0f64);
    for re in crate::subsystems::linspace(-0.5, 0.5, 5) {
        for im in crate::subsystems::linspace(0.6, 1.4, 5) {
            let z = Complex::new(re, im);
            let want = chart_laplace_beltrami(&model, &m, chart_function, z)?;
            let base = bookstein_representative(z, &m)?;
            for k in 0..3 {
                let cfg = apply_similarity(&base, &random_similarity(&mut rng));
                let got = lifted_shape_laplacian(&model, &wf, &cfg, &scheme, JacobianRoute::Invariant)?;
                let half = lifted_shape_laplacian(&model, &wf, &cfg, &scheme.halved(), JacobianRoute::Invariant)?;
                let (e, eh) = (crel(got, want), crel(got, half));
                worst = worst.max(e);
                worst_h = worst_h.max(eh);
                table.rows.push(vec![re, im, k as f64, e, eh]);
            }
        }
    }
    Ok((
        vec![Check::below(5, "lifted vs chart Laplace-Beltrami", worst, 1e-4), Check::below(5, "(h, h/2) agreement", worst_h, 1e-4)],
        vec![table],
    ))
}

fn intertwinings(p: &SuiteParams) -> Result<(Vec<Check>, Vec<Table>)> {
    let model = p.model.model();
    let mut rng = stream(p.seed, "operators/intertwining", 0);
    let settings = OperatorSettings { scheme: FdScheme::new(p.h, 2, false)?, ..Default::default() };
    let route = settings.route;
    let pts: Vec<MassedConfiguration<f64>> = (0..p.points).map(|_| random_regular_config(&mut rng, &p.masses)).collect();
    let fns: Vec<WaveFunctionModel<f64>> = (0..3).map(|k| invariant_test_function(k, &pts[..1])).collect::<Result<_>>()?;
    let n = (3 * p.masses.len()) as f64;
    let mut table = Table::new("intertwining", &["point", "function", "h1_h2", "h2_h3"]);
    let (mut e12, mut e23) = (0.0f64, 0.0f64);
    for (k, wf) in fns.iter().enumerate() {
        let g2 = gauge_transform_wavefunction(wf, Gauge::G1, Gauge::G2, &model, route)?;
        let g3 = gauge_transform_wavefunction(&g2, Gauge::G2, Gauge::G3, &model, route)?;
        for (i, q) in pts.iter().enumerate() {
            let h1 = hamiltonian_apply(Gauge::G1, &model, wf, q, &settings)?;
            let h2 = hamiltonian_apply(Gauge::G2, &model, &g2, q, &settings)?;
            let h3 = hamiltonian_apply(Gauge::G3, &model, &g3, q, &settings)?;
            let j = gauge_factor(Gauge::G2, &model, route, q)?;
            let f = conformal_factor(&model, q)?;
            let (a, b) = (crel(h2, h1 * j), crel(h3, h2 * f.powf(n / 4.0)));
            e12 = e12.max(a);
            e23 = e23.max(b);
            table.rows.push(vec![i as f64, k as f64, a, b]);
        }
    }
    let mut checks = vec![Check::below(6, "H1 <-> H2", e12, 1e-4), Check::below(6, "H2 <-> H3", e23, 1e-4)];

    // PDO recovery: differences of operator pairs are multiplication by V1 and V2.
    // Richardson on nested second differences is roundoff-limited at small steps.
    let scheme = FdScheme::new(4.0 * p.h, 2, true)?;
    let settings = OperatorSettings { scheme, ..settings };
        let g2s: Vec<WaveFunctionModel<f64>> =
        fns.iter().map(|w| gauge_transform_wavefunction(w, Gauge::G1, Gauge::G2, &model, route)).collect::<Result<_>>()?;
    let one = WaveFunctionModel::new(Arc::new(|_: &MassedConfiguration<f64>| Complex::from(1.0)), Gauge::G2, 1.0, &[])?;
    let ev = |w: &WaveFunctionModel<f64>, q: &MassedConfiguration<f64>| w.eval(q);
    let a1 = |w: &WaveFunctionModel<f64>, q: &MassedConfiguration<f64>| Ok(laplace_beltrami_g(&model, w, q, &scheme)? * -0.5);
    let b1 = |w: &WaveFunctionModel<f64>, q: &MassedConfiguration<f64>| hamiltonian_apply(Gauge::G2, &model, w, q, &settings);
    let v1 = pdo_difference_check(a1, b1, ev, &g2s, &one, &pts)?;
    let v1_err = max_of(pts.iter().zip(&v1.multiplier).map(|(q, m)| potential_v1(&model, q, &scheme, route).map_or(f64::INFINITY, |v| rel(*m, v))));
    let pw = n / 4.0;
    let a2 = |w: &WaveFunctionModel<f64>, q: &MassedConfiguration<f64>| {
        Ok(flux_divergence(|c| Ok(conformal_factor(&model, c)?.recip()), |c| w.eval(c), q, &scheme)? * -0.5)
    };
    let b2 = |w: &WaveFunctionModel<f64>, q: &MassedConfiguration<f64>| {
        let lap = laplace_beltrami_fn(&model, |c| Ok(w.eval(c)? * conformal_factor(&model, c)?.powf(-pw)), q, &scheme)?;
        Ok(lap * (-0.5 * conformal_factor(&model, q)?.powf(pw)))
    };
    let v2 = pdo_difference_check(a2, b2, ev, &g2s, &one, &pts)?;
    let v2_err = max_of(pts.iter().zip(&v2.multiplier).map(|(q, m)| potential_v2(&model, q, &scheme).map_or(f64::INFINITY, |v| rel(*m, v))));
    checks.push(Check::below(6, "PDO recovers V1", v1_err, 1e-4));
    checks.push(Check::below(6, "PDO V1 function independence", v1.spread, 1e-6));
    checks.push(Check::below(6, "PDO recovers V2", v2_err, 1e-4));
    checks.push(Check::below(6, "PDO V2 function independence", v2.spread, 1e-6));
    Ok((checks, vec![table]))
}

fn schrodinger_identity(p: &SuiteParams) -> Result<(Vec<Check>, Vec<Table>)> {
    let model = p.model.model();
    let mut rng = stream(p.seed, "operators/schrodinger", 0);
    let n = (3 * p.masses.len()) as f64;
    let mut table = Table::new("schrodinger_identity", &["energy", "point", "rel_error"]);
    let mut worst: f64 = 0.0;
    for energy in [0.0, 1.0] {
        let settings = OperatorSettings { energy, scheme: FdScheme::new(p.h, 2, false)?, ..Default::default() };
        for i in 0..p.points {
            let q = random_regular_config(&mut rng, &p.masses);
            let wf = invariant_test_function(i, std::slice::from_ref(&q))?;
            let s = gauge_transform_wavefunction(&wf, Gauge::G1, Gauge::Schrodinger, &model, settings.route)?;
            let lhs = hamiltonian_apply(Gauge::Schrodinger, &model, &s, &q, &settings)?;
            let resid = hamiltonian_apply(Gauge::G1, &model, &wf, &q, &settings)? - wf.eval(&q)? * energy;
            let f = conformal_factor(&model, &q)?;
            let rhs = resid * f.powf((n + 2.0) / 4.0) * gauge_factor(Gauge::G2, &model, settings.route, &q)?;
            let e = crel(lhs, rhs);
            worst = worst.max(e);
            table.rows.push(vec![energy, i as f64, e]);
        }
    }
    Ok((vec![Check::below(7, "H_S transports the residual", worst, 1e-4)], vec![table]))
}

fn bohmian_gauges(p: &SuiteParams) -> Result<(Vec<Check>, Vec<Table>)> {
    let model = p.model.model();
    let route = JacobianRoute::Invariant;
    let scheme = FdScheme::new(p.h, 4, false)?;
    let masses = [1.0; 3];
    let mut rng = stream(p.seed, "equivariance/velocity", 0);
    let mut table = Table::new("velocity_gauges", &["point", "g1_g2", "g1_g3", "vertical"]);
    let (mut e2, mut e3, mut vert) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..p.points {
        let q = random_regular_config(&mut rng, &masses);
        let g1 = invariant_test_function(i, std::slice::from_ref(&q))?;
        let g2 = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::G2, &model, route)?;
        let g3 = gauge_transform_wavefunction(&g2, Gauge::G2, Gauge::G3, &model, route)?;
        let v1 = bohm_velocity(Gauge::G1, &model, &g1, &q, &scheme)?;
        let v2 = bohm_velocity(Gauge::G2, &model, &g2, &q, &scheme)?;
        let v3 = bohm_velocity(Gauge::G3, &model, &g3, &q, &scheme)?;
        let scale = max_of(v1.components.iter().map(|v| v.abs()));
        let d = |a: &TangentVector<f64>| max_of(a.components.iter().zip(&v1.components).map(|(x, y)| (x - y).abs())) / scale;
        let vn = mass_metric_inner(&q, &v1, &v1)?.sqrt();
        let mut o: f64 = 0.0;
        for gen in vertical_generators(&q).generators {
            let gn = mass_metric_inner(&q, &gen, &gen)?.sqrt();
            o = o.max(mass_metric_inner(&q, &v1, &gen)?.abs() / (vn * gn));
        }
        e2 = e2.max(d(&v2));
        e3 = e3.max(d(&v3));
        vert = vert.max(o);
        table.rows.push(vec![i as f64, d(&v2), d(&v3), o]);
    }
    let mut checks = vec![
        Check::below(8, "v1 = v2", e2, 1e-6),
        Check::below(8, "v1 = v3", e3, 1e-6),
        Check::below(8, "v1 orthogonal to vertical generators", vert, 1e-8),
    ];

    // Random time change of a gauge-3 trajectory against the direct Schrödinger-gauge run.
    let q = random_regular_config(&mut rng, &masses);
    let g1 = invariant_test_function(2, std::slice::from_ref(&q))?;
    let g3 = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::G3, &model, route)?;
    let s = gauge_transform_wavefunction(&g1, Gauge::G1, Gauge::Schrodinger, &model, route)?;
    let opts = BohmOptions::default();
    let tr3 = integrate_bohm(Gauge::G3, &model, &WaveFamily::stationary(&g3), &q, 0.01, 200, &opts)?;
    let ts = random_time_change(&model, &tr3)?;
    let span = *ts.times.last().expect("non-empty trajectory") - ts.times[0];
    let direct = integrate_bohm(Gauge::Schrodinger, &model, &WaveFamily::stationary(&s), &q, span / 200.0, 200, &opts)?;
    let len = polyline_length(&tr3.configs);
    let h = hausdorff_distance(&tr3.configs, &direct.configs) / len.max(1.0);
    checks.push(Check::holds(8, "trajectories complete", tr3.aborted.is_none() && direct.aborted.is_none()));
    checks.push(Check::below(8, "Hausdorff distance per unit arclength", h, 1e-4));
    Ok((checks, vec![table]))
}

fn equivariance(p: &SuiteParams) -> Result<(Vec<Check>, Vec<Table>)> {
    let m = [1.0; 3];
    let x0 = vec![0.0; 9];
    let p0 = vec![1.0; 9];
    let family = free_gaussian_family(&m, x0.clone(), p0.clone(), 1.0)?;
    let cdf = move |i: usize, x: f64| free_gaussian_marginal_cdf(1.0, x0[i], p0[i], 1.0, 1.0, x);
    let bounds = Bounds::cube(9, p.box_size);
    let flat = ConformalModel::Constant(1.0);
    let run = |scale: f64| {
        let opts = EquivarianceOptions {
            n: p.n_samples,
            t_final: 1.0,
            dt: p.dt,
            seed: p.seed,
            route: JacobianRoute::Invariant,
            bohm: BohmOptions { velocity_scale: scale, ..Default::default() },
            sampler: MetropolisOptions::default(),
            alpha: 0.01,
        };
        equivariance_check(&flat, Gauge::Schrodinger, &family, &m, &bounds, Reference::Analytic(&cdf), &opts)
    };
    let good = run(1.0)?;
    let bad = run(1.1)?;
    let mut table = Table::new("equivariance_ks", &["coordinate", "statistic", "p_value", "control_statistic", "control_p_value"]);
    for (i, (a, b)) in good.ks.iter().zip(&bad.ks).enumerate() {
        table.rows.push(vec![i as f64, a.statistic, a.p_value, b.statistic, b.p_value]);
    }
    let checks = vec![
        Check::above(9, "min per-coordinate KS p", good.min_p, 0.01),
        Check::below(9, "x1.1 velocity control: min KS p", bad.min_p, 0.01),
        Check::below(9, "excluded trajectories", good.excluded as f64, 1.0),
    ];
    Ok((checks, vec![table]))
}

fn conditional_probability(p: &SuiteParams) -> Result<(Vec<Check>, Vec<Table>)> {
    let split = SystemSplit::new(vec![0], vec![1.0; 4])?;
    let model = p.model.model();
    let domain = UniverseDomain { system_radius: p.box_size, environment_scale: (0.8, 1.6) };
    let probe = ProbeBox::cube(3, -3.2, 3.6, 34)?;
    let mut checks = Vec::new();
    let mut table = Table::new("conditional_ks", &["state", "coordinate", "statistic", "p_value"]);
    for (k, kind) in [SubsystemState::Product, SubsystemState::Entangled].into_iter().enumerate() {
        let wf = subsystem_test_state(&split, kind)?;
        let opts = ConditionalCheckOptions::new(p.n_samples, p.seed, probe.clone());
        let r = monte_carlo_conditional_check(Gauge::G1, &model, &wf, &split, &domain, &opts)?;
        checks.push(Check::above(10, format!("{kind:?}: aggregate KS p"), r.aggregate_p, 0.01));
        checks.push(Check::below(10, format!("{kind:?}: excluded cell fraction"), r.excluded_fraction, 0.05 + 1e-12));
        for (c, ks) in r.pooled.iter().enumerate() {
            table.rows.push(vec![k as f64, c as f64, ks.statistic, ks.p_value]);
        }
        if kind == SubsystemState::Entangled {
            let control = ConditionalCheckOptions { n: (p.n_samples / 5).max(1000), wrong_frame: true, ..opts };
            let bad = monte_carlo_conditional_check(Gauge::G1, &model, &wf, &split, &domain, &control)?;
            checks.push(Check::below(10, "wrong-frame control: aggregate KS p", bad.aggregate_p, 0.01));
        }
    }

    let toy = StationaryToy::new(2.0, 1.5, 0.3)?;
    let st = stationary_conditional_check(&toy, &StationaryCheckOptions::new(p.n_paths, p.seed))?;
    checks.push(Check::below(10, "crossing measures G3 vs S: max |z|", st.max_abs_z, 3.0));
    checks.push(Check::below(10, "currents G3 vs S: max relative difference", st.current_max_rel, 1e-6));
    for route in [&st.gauge3, &st.schrodinger] {
        checks.push(Check::above(10, format!("stationary {}: aggregate KS p", route.gauge), route.aggregate_p, 0.01));
        checks.push(Check::below(10, format!("stationary {}: multi-crossing fraction", route.gauge), route.multi_crossing_fraction, 0.05));
        checks.push(Check::below(10, format!("stationary {}: wrong-cell control p", route.gauge), route.wrong_cell_aggregate_p, 0.01));
    }
    let mut crossings = Table::new("crossing_agreement", &["set", "gauge3", "gauge3_se", "schrodinger", "schrodinger_se", "z"]);
    for (i, c) in st.crossing_agreement.iter().enumerate() {
        crossings.rows.push(vec![i as f64, c.left, c.left_se, c.right, c.right_se, c.z]);
    }
    Ok((checks, vec![table, crossings]))
}
