//! Measures on geometric paths: time functions, crossing measures, the
//! association between path measures and configuration-space measures, and the
//! conditional probability formula for stationary states, checked on a flat toy.

use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bohm::{bohm_velocity, equilibrium_density, integrate_bohm, BohmOptions, WaveFamily};
use crate::error::{invalid_param, Error, Result};
use crate::fd::{flux_divergence, partial, FdScheme};
use crate::kinematics::*;
use crate::quantum::{gauge_transform_wavefunction, Gauge, JacobianRoute, WaveFunctionModel};
use crate::rng::StreamRng;
use crate::sampling::{metropolis, metropolis_with_moves, Bounds, ExtraMove, MetropolisOptions, SamplerDiagnostics};
use crate::stats::{ks_one_sample, KsResult};
use crate::subsystems::{conditional_born_distribution, linspace, ConditionalCdfGrid, EnvironmentFrame, ProbeBox, SystemSplit};

/// Unparametrized path: an ordered polyline of configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricPath {
    pub points: Vec<MassedConfiguration<f64>>,
    pub provenance: String,
}

impl GeometricPath {
    pub fn new(points: Vec<MassedConfiguration<f64>>, provenance: impl Into<String>) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid_param("points", "a path needs at least two points"));
        }
        let dim = points[0].dim();
        if let Some(p) = points.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: p.dim() });
        }
        Ok(Self { points, provenance: provenance.into() })
    }

    /// Largest Euclidean distance between consecutive points.
    pub fn max_step(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].coords().iter().zip(w[1].coords()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn check_step_bound(&self, bound: f64) -> Result<()> {
        let s = self.max_step();
        if s > bound {
            return Err(invalid_param("points", format!("consecutive points {s:e} apart, bound {bound:e}")));
        }
        Ok(())
    }
}

pub type TimeFn = Arc<dyn Fn(&MassedConfiguration<f64>) -> f64 + Send + Sync>;

/// A real function on configuration space used to parametrize paths.
#[derive(Clone)]
pub struct TimeFunction {
    evaluator: TimeFn,
    /// `Some((i, rate))` when `τ = q_i / rate`.
    coordinate: Option<(usize, f64)>,
}

impl std::fmt::Debug for TimeFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TimeFunction").field("coordinate", &self.coordinate).finish()
    }
}

impl TimeFunction {
    pub fn new(evaluator: TimeFn) -> Self {
        Self { evaluator, coordinate: None }
    }

    /// Linear clock `τ = q_index / rate`.
    pub fn coordinate(index: usize, rate: f64) -> Result<Self> {
        if !(rate != 0.0) || !rate.is_finite() {
            return Err(invalid_param("rate", "clock rate must be finite and non-zero"));
        }
        Ok(Self { evaluator: Arc::new(move |c| c.coords()[index] / rate), coordinate: Some((index, rate)) })
    }

    pub fn eval(&self, cfg: &MassedConfiguration<f64>) -> f64 {
        (self.evaluator)(cfg)
    }

    pub fn linear_clock(&self) -> Option<(usize, f64)> {
        self.coordinate
    }

    /// Strictly increasing or strictly decreasing along the path.
    pub fn monotone_on(&self, path: &GeometricPath) -> bool {
        let t: Vec<f64> = path.points.iter().map(|p| self.eval(p)).collect();
        t.windows(2).all(|w| w[1] > w[0]) || t.windows(2).all(|w| w[1] < w[0])
    }

    /// Largest change of `τ` when the system particles are displaced at the probes;
    /// zero when `τ` depends on the environment only.
    pub fn system_dependence(&self, split: &SystemSplit, probes: &[MassedConfiguration<f64>], shift: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for p in probes {
            let t0 = self.eval(p);
            for &a in &split.system {
                for k in 0..3 {
                    let mut u = vec![0.0; p.dim()];
                    u[3 * a + k] = shift;
                    worst = worst.max((self.eval(&p.displaced(&u, 1.0)) - t0).abs());
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub path: usize,
    pub config: MassedConfiguration<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingMeasure {
    /// Crossings of paths that cross the section exactly once, in the positive direction.
    pub crossings: Vec<Crossing>,
    pub total_weight: f64,
    pub multi_crossing_paths: usize,
    pub multi_crossing_fraction: f64,
    /// Crossings against the flow direction (the section is not transversal there).
    pub recrossings: usize,
    pub warnings: Vec<String>,
}

impl CrossingMeasure {
    /// Normalized measure of the crossings satisfying `pred`.
    pub fn probability(&self, pred: impl Fn(&MassedConfiguration<f64>) -> bool) -> f64 {
        let w: f64 = self.crossings.iter().filter(|c| pred(&c.config)).map(|c| c.weight).sum();
        w / self.total_weight
    }
}

/// Crossings of the level set `τ = level` by weighted paths, interpolated linearly
/// within segments. Paths crossing more than once are discarded and counted.
pub fn crossing_measure(paths: &[GeometricPath], weights: &[f64], tau: &TimeFunction, level: f64) -> Result<CrossingMeasure> {
    if paths.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: paths.len(), got: weights.len() });
    }
    let mut crossings = Vec::new();
    let (mut multi, mut backwards) = (0, 0);
    for (i, (path, &w)) in paths.iter().zip(weights).enumerate() {
        let t: Vec<f64> = path.points.iter().map(|p| tau.eval(p)).collect();
        let mut found = Vec::new();
        for k in 0..t.len() - 1 {
            let (a, b) = (t[k] - level, t[k + 1] - level);
            // Half-open so a crossing exactly at a vertex is counted once.
            if (a < 0.0 && b >= 0.0) || (a >= 0.0 && b < 0.0) {
                let s = a / (a - b);
                let (p, q) = (&path.points[k], &path.points[k + 1]);
                let diff: Vec<f64> = q.coords().iter().zip(p.coords()).map(|(x, y)| x - y).collect();
                found.push((p.displaced(&diff, s), b > a));
            }
        }
        backwards += found.iter().filter(|f| !f.1).count();
        match found.len() {
            0 => {}
            1 if found[0].1 => crossings.push(Crossing { path: i, config: found.pop().unwrap().0, weight: w }),
            1 => {}
            _ => multi += 1,
        }
    }
    let total_weight: f64 = crossings.iter().map(|c| c.weight).sum();
    let mut warnings = Vec::new();
    if backwards > 0 {
        warnings.push(format!("NonTransversal: {backwards} crossings against the flow"));
    }
    Ok(CrossingMeasure {
        crossings,
        total_weight,
        multi_crossing_paths: multi,
        multi_crossing_fraction: multi as f64 / paths.len().max(1) as f64,
        recrossings: backwards,
        warnings,
    })
}

/// Probability current `J = ρ v` of a gauge.
pub fn current(
    gauge: Gauge,
    model: &ConformalModel<f64>,
    wf: &WaveFunctionModel<f64>,
    cfg: &MassedConfiguration<f64>,
    scheme: &FdScheme<f64>,
    route: JacobianRoute,
) -> Result<Vec<f64>> {
    let rho = equilibrium_density(gauge, model, wf, cfg, route)?;
    Ok(bohm_velocity(gauge, model, wf, cfg, scheme)?.components.into_iter().map(|v| rho * v).collect())
}

/// Component `i` of the probability current, from a single partial derivative.
pub fn current_component(
    gauge: Gauge,
    model: &ConformalModel<f64>,
    wf: &WaveFunctionModel<f64>,
    cfg: &MassedConfiguration<f64>,
    i: usize,
    scheme: &FdScheme<f64>,
) -> Result<f64> {
    let psi = wf.eval(cfg)?;
    if psi.norm_sqr() == 0.0 {
        return Ok(0.0);
    }
    let d = partial(&mut |c: &MassedConfiguration<f64>| wf.eval(c), cfg, i, scheme.step(cfg), scheme.order)?;
    let factor = match gauge {
        Gauge::Schrodinger => 1.0,
        _ => conformal_factor(model, cfg)?.recip(),
    };
    let rho = equilibrium_density(gauge, model, wf, cfg, JacobianRoute::Invariant)?;
    Ok(rho * factor * (d / psi).im / cfg.coord_mass(i))
}

/// Flux-weighted sample of configurations on the section `τ = level` of a linear clock:
/// density `max(J·∇τ, 0)` in the remaining coordinates, which range over `bounds`.
/// `symmetry` is passed to the sampler; it acts on the remaining coordinates.
#[allow(clippy::too_many_arguments)]
pub fn sample_section_flux(
    gauge: Gauge,
    model: &ConformalModel<f64>,
    wf: &WaveFunctionModel<f64>,
    masses: &[f64],
    tau: &TimeFunction,
    level: f64,
    bounds: &Bounds,
    n: usize,
    seed: u64,
    sampler: &MetropolisOptions,
    scheme: &FdScheme<f64>,
    symmetry: Option<&ExtraMove<'_>>,
) -> Result<(Vec<MassedConfiguration<f64>>, SamplerDiagnostics)> {
    let (index, rate) = tau.linear_clock().ok_or_else(|| invalid_param("tau", "section sampling needs a linear clock"))?;
    let dim = 3 * masses.len();
    if bounds.dim() != dim - 1 {
        return Err(Error::DimensionMismatch { expected: dim - 1, got: bounds.dim() });
    }
    let lift = |r: &[f64]| -> Result<MassedConfiguration<f64>> {
        let mut q = Vec::with_capacity(dim);
        q.extend_from_slice(&r[..index]);
        q.push(level * rate);
        q.extend_from_slice(&r[index..]);
        MassedConfiguration::from_flat(q, masses.to_vec())
    };
    let density = |r: &[f64]| -> f64 {
        lift(r)
            .and_then(|c| current_component(gauge, model, wf, &c, index, scheme))
            .map(|j| (j / rate).max(0.0))
            .unwrap_or(0.0)
    };
    let (raw, diag) = match symmetry {
        Some(s) => metropolis_with_moves(&density, bounds, n, seed, sampler, s)?,
        None => metropolis(&density, bounds, n, seed, sampler)?,
    };
    let configs = raw.iter().map(|r| lift(r)).collect::<Result<_>>()?;
    Ok((configs, diag))
}

/// Follows the guiding equation from `q0` until `τ` passes `level`, or `max_steps` elapse.
#[allow(clippy::too_many_arguments)]
pub fn trace_to_level(
    gauge: Gauge,
    model: &ConformalModel<f64>,
    family: &WaveFamily<f64>,
    q0: &MassedConfiguration<f64>,
    tau: &TimeFunction,
    level: f64,
    dt: f64,
    max_steps: usize,
    opts: &BohmOptions<f64>,
) -> Result<GeometricPath> {
    let ahead = tau.eval(q0) < level;
    let mut points = vec![q0.clone()];
    let chunk = 8;
    let mut taken = 0;
    while taken < max_steps {
        let last = points.last().unwrap().clone();
        let rec = integrate_bohm(gauge, model, family, &last, dt, chunk, opts)?;
        let done = rec.configs.iter().skip(1).position(|c| (tau.eval(c) >= level) == ahead);
        if let Some(k) = done {
            points.extend(rec.configs.into_iter().skip(1).take(k + 1));
            return GeometricPath::new(points, format!("{gauge} guiding flow"));
        }
        if let Some(e) = rec.aborted {
            return Err(e);
        }
        taken += chunk;
        points.extend(rec.configs.into_iter().skip(1));
    }
    GeometricPath::new(points, format!("{gauge} guiding flow (level not reached)"))
}

/// Moves `q0` along the guiding flow, forward or backward, to the point where `τ = level`.
#[allow(clippy::too_many_arguments)]
pub fn flow_to_level(
    gauge: Gauge,
    model: &ConformalModel<f64>,
    family: &WaveFamily<f64>,
    q0: &MassedConfiguration<f64>,
    tau: &TimeFunction,
    level: f64,
    dt: f64,
    opts: &BohmOptions<f64>,
) -> Result<MassedConfiguration<f64>> {
    let t0 = tau.eval(q0);
    if t0 == level {
        return Ok(q0.clone());
    }
    // Which time direction raises τ is read off from a probe step.
    let probe = integrate_bohm(gauge, model, family, q0, dt, 1, opts)?;
    let rising = tau.eval(probe.configs.last().unwrap()) > t0;
    let step = if rising == (level > t0) { dt } else { -dt };
    let path = trace_to_level(gauge, model, family, q0, tau, level, step, 100_000, opts)?;
    let n = path.points.len();
    let (p, q) = (&path.points[n - 2], &path.points[n - 1]);
    let (a, b) = (tau.eval(p) - level, tau.eval(q) - level);
    if a * b > 0.0 {
        return Err(invalid_param("level", "level not reached along the flow"));
    }
    let diff: Vec<f64> = q.coords().iter().zip(p.coords()).map(|(x, y)| x - y).collect();
    Ok(p.displaced(&diff, a / (a - b)))
}

/// A region of configuration space for the association check.
pub struct Region<'a> {
    pub name: String,
    pub contains: &'a (dyn Fn(&MassedConfiguration<f64>) -> bool + Sync),
    /// The region is a union of flow lines, so it also names a set of paths.
    pub flow_invariant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub name: String,
    pub left: f64,
    pub left_se: f64,
    pub right: f64,
    pub right_se: f64,
    pub z: f64,
}

impl Comparison {
    pub fn new(name: &str, left: (f64, f64), right: (f64, f64)) -> Self {
        let se = (left.1 * left.1 + right.1 * right.1).sqrt();
        let z = if se > 0.0 { (left.0 - right.0) / se } else if left.0 == right.0 { 0.0 } else { f64::INFINITY };
        Self { name: name.to_string(), left: left.0, left_se: left.1, right: right.0, right_se: right.1, z }
    }
}

fn proportion(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n.max(1) as f64;
    (p, (p * (1.0 - p) / n.max(1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssociationReport {
    /// `μ(A ∩ slab) / μ(slab)` against `𝔼 τ_γ(A ∩ slab) / |slab|`, per region.
    pub time_in_region: Vec<Comparison>,
    /// `ℙ(S)` from crossings against `μ(Š | τ = t)`, per region and level.
    pub conditioning: Vec<Comparison>,
    /// `ℙ(S)` at the first level against the second, for flow-invariant regions.
    pub level_independence: Vec<Comparison>,
    pub monotonicity_violations: usize,
    pub max_abs_z: f64,
    pub passed: bool,
}

/// Checks that `μ` is associated with the path measure `ℙ` and the time function `τ`.
///
/// `mu_samples` are draws from `μ` restricted to the slab `t_a ≤ τ ≤ t_b`; `paths`
/// are equally weighted draws from `ℙ` (for instance flux-weighted starts on `τ = t_a`
/// followed past `t_b`). For the conditioning identity at each level `t`, the
/// `μ`-samples within `width` of `t` are moved along the flow to `τ = t` by `transport`.
#[allow(clippy::too_many_arguments)]
pub fn path_measure_association_check(
    mu_samples: &[MassedConfiguration<f64>],
    paths: &[GeometricPath],
    tau: &TimeFunction,
    slab: (f64, f64),
    regions: &[Region<'_>],
    levels: [f64; 2],
    width: f64,
    transport: &(dyn Fn(&MassedConfiguration<f64>, f64) -> Result<MassedConfiguration<f64>> + Sync),
) -> Result<AssociationReport> {
    let (ta, tb) = slab;
    if !(ta < tb) || levels.iter().any(|t| *t < ta || *t > tb) {
        return Err(invalid_param("slab", "need t_a < t_b with both levels inside the slab"));
    }
    let good: Vec<&GeometricPath> = paths.iter().filter(|p| tau.monotone_on(p)).collect();
    let violations = paths.len() - good.len();
    let in_slab: Vec<&MassedConfiguration<f64>> = mu_samples.iter().filter(|q| (ta..=tb).contains(&tau.eval(q))).collect();

    let mut time_in_region = Vec::new();
    for region in regions {
        let mu = proportion(in_slab.iter().filter(|q| (region.contains)(q)).count(), in_slab.len());
        // Time spent per path, with segments clipped to the slab.
        let times: Vec<f64> = good
            .par_iter()
            .map(|p| {
                let mut acc = 0.0;
                for w in p.points.windows(2) {
                    let (t0, t1) = (tau.eval(&w[0]), tau.eval(&w[1]));
                    let (lo, hi) = (t0.min(t1).max(ta), t0.max(t1).min(tb));
                    if hi <= lo {
                        continue;
                    }
                    let diff: Vec<f64> = w[1].coords().iter().zip(w[0].coords()).map(|(a, b)| a - b).collect();
                    let mid = w[0].displaced(&diff, 0.5);
                    if (region.contains)(&mid) {
                        acc += hi - lo;
                    }
                }
                acc / (tb - ta)
            })
            .collect();
        let n = times.len().max(1) as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        time_in_region.push(Comparison::new(&region.name, mu, (mean, (var / n).sqrt())));
    }

    let owned: Vec<GeometricPath> = good.iter().map(|p| (*p).clone()).collect();
    let weights = vec![1.0; owned.len()];
    let mut conditioning = Vec::new();
    let mut per_level = Vec::new();
    for &t in &levels {
        let cm = crossing_measure(&owned, &weights, tau, t)?;
        let moved: Vec<MassedConfiguration<f64>> = in_slab
            .par_iter()
            .filter(|q| (tau.eval(q) - t).abs() <= width)
            .map(|q| transport(q, t))
            .collect::<Result<_>>()?;
        let mut probs = Vec::new();
        for region in regions {
            let hits = cm.crossings.iter().filter(|c| (region.contains)(&c.config)).count();
            let p = proportion(hits, cm.crossings.len());
            let mu = proportion(moved.iter().filter(|q| (region.contains)(q)).count(), moved.len());
            conditioning.push(Comparison::new(&format!("{} at t={t}", region.name), p, mu));
            probs.push(p);
        }
        per_level.push(probs);
    }
    let level_independence: Vec<Comparison> =
        regions.iter().enumerate().filter(|(_, r)| r.flow_invariant).map(|(i, r)| Comparison::new(&r.name, per_level[0][i], per_level[1][i])).collect();
    let max_abs_z = time_in_region.iter().chain(&conditioning).chain(&level_independence).map(|c| c.z.abs()).fold(0.0, f64::max);
    Ok(AssociationReport {
        time_in_region,
        conditioning,
        level_independence,
        monotonicity_violations: violations,
        max_abs_z,
        passed: max_abs_z <= 3.0,
    })
}

/// Flat toy universe of four unit-mass particles: the system is particle 0, the
/// environment particles 1-3. In the Schrödinger gauge
/// `ψ_S = e^{i k y₁} (x₁ + i x₂) e^{-|x|²/2} (2 y₂ + c x₃) e^{-(y₂² + |y_rest|²)/2}`,
/// with `y₁, y₂` the first two coordinates of particle 1. It is an eigenstate of
/// `-½Δ + ½(|x|² + y₂² + |y_rest|²)`: both terms of the superposition carry the
/// same oscillator energy, so `c ≠ 0` entangles system and environment while
/// keeping the state stationary. The conformal factor `f = exp(β y₃)` depends on
/// the environment only and leaves the Schrödinger-gauge equation unchanged.
/// The clock `τ = y₁ / k` is the Schrödinger-gauge time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationaryToy {
    pub k: f64,
    pub entanglement: f64,
    pub beta: f64,
}

impl StationaryToy {
    pub const CLOCK: usize = 3;
    pub const KEY: usize = 4;
    pub const FACTOR: usize = 5;

    pub fn new(k: f64, entanglement: f64, beta: f64) -> Result<Self> {
        if !(k > 0.0) || !entanglement.is_finite() || !beta.is_finite() {
            return Err(invalid_param("toy", "need k > 0 and finite entanglement and beta"));
        }
        Ok(Self { k, entanglement, beta })
    }

    pub fn masses(&self) -> Vec<f64> {
        vec![1.0; 4]
    }

    pub fn split(&self) -> SystemSplit {
        SystemSplit::new(vec![0], self.masses()).expect("fixed split is valid")
    }

    pub fn model(&self) -> ConformalModel<f64> {
        let beta = self.beta;
        if beta == 0.0 {
            return ConformalModel::Constant(1.0);
        }
        ConformalModel::Toy(Arc::new(move |c: &MassedConfiguration<f64>| (beta * c.coords()[Self::FACTOR]).exp()))
    }

    /// Oscillator energy of the state (the clock momentum adds `k²/2`).
    pub fn energy(&self) -> f64 {
        4.0 + 7.0 / 2.0 + self.k * self.k / 2.0
    }

    pub fn potential(&self, cfg: &MassedConfiguration<f64>) -> f64 {
        let q = cfg.coords();
        0.5 * q.iter().enumerate().filter(|(i, _)| *i != Self::CLOCK).map(|(_, v)| v * v).sum::<f64>()
    }

    pub fn schrodinger_wf(&self) -> WaveFunctionModel<f64> {
        let (k, c) = (self.k, self.entanglement);
        let eval = move |cfg: &MassedConfiguration<f64>| -> Complex<f64> {
            let q = cfg.coords();
            let r2: f64 = q.iter().enumerate().filter(|(i, _)| *i != Self::CLOCK).map(|(_, v)| v * v).sum();
            let amp = (2.0 * q[Self::KEY] + c * q[2]) * (-0.5 * r2).exp();
            Complex::new(0.0, k * q[Self::CLOCK]).exp() * Complex::new(q[0], q[1]) * amp
        };
        WaveFunctionModel::unchecked(Arc::new(eval), Gauge::Schrodinger, 1.0)
    }

    pub fn gauge3_wf(&self) -> Result<WaveFunctionModel<f64>> {
        gauge_transform_wavefunction(&self.schrodinger_wf(), Gauge::Schrodinger, Gauge::G3, &self.model(), JacobianRoute::Invariant)
    }

    pub fn wf(&self, gauge: Gauge) -> Result<WaveFunctionModel<f64>> {
        match gauge {
            Gauge::Schrodinger => Ok(self.schrodinger_wf()),
            Gauge::G3 => self.gauge3_wf(),
            g => Err(invalid_param("gauge", format!("the toy is defined in gauges G3 and S, not {g}"))),
        }
    }

    pub fn clock(&self) -> TimeFunction {
        TimeFunction::coordinate(Self::CLOCK, self.k).expect("k > 0")
    }

    /// Environment frame with clock reading `t`, key coordinate `y2`, the rest at the origin.
    pub fn frame(&self, t: f64, y2: f64) -> EnvironmentFrame {
        EnvironmentFrame { positions: vec![[self.k * t, y2, 0.0], [0.0; 3], [0.0; 3]] }
    }

    /// Relative residual of the stationary Schrödinger-gauge equation at `cfg`.
    pub fn stationarity_residual(&self, cfg: &MassedConfiguration<f64>, scheme: &FdScheme<f64>) -> Result<f64> {
        let wf = self.schrodinger_wf();
        let psi = wf.eval(cfg)?;
        let lap = flux_divergence(|_| Ok(1.0), |c| wf.eval(c), cfg, scheme)?;
        let res = lap * -0.5 + psi * (self.potential(cfg) - self.energy());
        Ok(res.norm() / (self.energy() * psi.norm()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryCheckOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Section where paths start (flux-weighted) and section where crossings are read.
    pub start_level: f64,
    pub level: f64,
    pub dt: f64,
    pub probe: ProbeBox,
    pub nodes: usize,
    pub alpha: f64,
    pub current_points: usize,
    pub sampler: MetropolisOptions,
    pub scheme: FdScheme<f64>,
}

impl StationaryCheckOptions {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            start_level: 0.0,
            level: 0.25,
            dt: 0.02,
            probe: ProbeBox::cube(3, -4.0, 4.0, 32).expect("valid probe"),
            // Even, so no node sits on the environment node y₂ = 0 of the product state.
            nodes: 64,
            alpha: 0.01,
            current_points: 200,
            // Twice the default thinning: at 1e4 paths the KS test resolves the
            // residual correlation left by thinning at 2τ.
            sampler: MetropolisOptions { thin_factor: 4.0, ..Default::default() },
            scheme: FdScheme::new(1e-4, 2, false).expect("valid scheme"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteReport {
    pub gauge: String,
    /// Probability-integral-transform KS tests of the system coordinates at the crossings.
    pub pooled: Vec<KsResult>,
    pub aggregate_p: f64,
    /// Negative control: the same test against the conditional law of the mirrored
    /// environment `y₂ → -y₂`. Only informative when system and environment are entangled.
    pub wrong_cell_aggregate_p: f64,
    pub crossings: usize,
    pub failed_paths: usize,
    pub multi_crossing_fraction: f64,
    pub clock_violation_fraction: f64,
    pub recrossings: usize,
    pub sampler: SamplerDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryReport {
    pub gauge3: RouteReport,
    pub schrodinger: RouteReport,
    /// Largest relative pointwise difference between the gauge-3 and Schrödinger-gauge currents.
    pub current_max_rel: f64,
    /// Crossing probabilities of test sets, gauge 3 against Schrödinger gauge.
    pub crossing_agreement: Vec<Comparison>,
    pub max_abs_z: f64,
    pub stationarity_residual: f64,
    pub passed: bool,
}

type Predicate = fn(&MassedConfiguration<f64>) -> bool;

/// Test sets on crossing configurations, shared by the gauge comparison.
pub const CROSSING_SETS: [(&str, Predicate); 4] = [
    ("x1 > 0.5", |c| c.coords()[0] > 0.5),
    ("x3 > 0", |c| c.coords()[2] > 0.0),
    ("y2 > 0.5", |c| c.coords()[StationaryToy::KEY] > 0.5),
    ("|x12| > 1", |c| c.coords()[0].hypot(c.coords()[1]) > 1.0),
];

/// The stationary conditional probability formula on the toy: paths of the
/// guiding flow, started flux-weighted on one clock section and read off where
/// they cross a later one, carry the system at the conditional Born law given the
/// environment there. Run through gauge 3 and the Schrödinger gauge, whose
/// currents, and hence crossing measures, must coincide.
pub fn stationary_conditional_check(toy: &StationaryToy, opts: &StationaryCheckOptions) -> Result<StationaryReport> {
    if !(opts.level > opts.start_level) || !(opts.dt > 0.0) {
        return Err(invalid_param("level", "need level > start_level and dt > 0"));
    }
    let model = toy.model();
    let tau = toy.clock();
    let split = toy.split();
    let probes: Vec<MassedConfiguration<f64>> =
        (0..4).map(|i| split.assemble(&toy.frame(0.1 * i as f64, 0.3), &[0.4, -0.2, 0.1 * i as f64])).collect::<Result<_>>()?;
    if tau.system_dependence(&split, &probes, 0.5) > 0.0 {
        return Err(invalid_param("tau", "the clock must depend on the environment only"));
    }

    let s_wf = toy.schrodinger_wf();
    let g3_wf = toy.gauge3_wf()?;
    let mut current_max_rel: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let points = sample_section_flux(
        Gauge::Schrodinger,
        &model,
        &s_wf,
        &toy.masses(),
        &tau,
        opts.start_level,
        &Bounds::cube(11, 4.0),
        opts.current_points,
        opts.seed ^ 0x5eed,
        &MetropolisOptions { chains: 2, ..opts.sampler },
        &opts.scheme,
        None,
    )?
    .0;
    let fine = FdScheme::new(1e-3, 4, false)?;
    for q in &points {
        let j3 = current(Gauge::G3, &model, &g3_wf, q, &fine, JacobianRoute::Invariant)?;
        let js = current(Gauge::Schrodinger, &model, &s_wf, q, &fine, JacobianRoute::Invariant)?;
        let norm = js.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = j3.iter().zip(&js).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        current_max_rel = current_max_rel.max(diff / norm);
        residual = residual.max(toy.stationarity_residual(q, &fine)?);
    }

    // Section coordinates (clock removed): x at 0..3, y₂ at 3. Rotations of the
    // (x₁, x₂) plane and the joint reflection (x₃, y₂) → -(x₃, y₂) preserve the
    // flux density; the reflection carries chains across the node between the two lobes.
    let apply = |r: &mut Vec<f64>, p: f64, rng: &mut StreamRng| -> f64 {
        let (sin, cos) = (std::f64::consts::TAU * rng.gen::<f64>()).sin_cos();
        let (a, b) = (r[0], r[1]);
        r[0] = cos * a - sin * b;
        r[1] = sin * a + cos * b;
        if rng.gen::<bool>() {
            r[2] = -r[2];
            r[3] = -r[3];
        }
        p
    };
    let invariants = |r: &[f64]| -> Vec<f64> {
        let mut v = vec![r[0].hypot(r[1]), r[2] * r[3].signum(), r[3].abs()];
        v.extend_from_slice(&r[4..]);
        // The radial coordinate decorrelates slowest under isotropic proposals.
        v.push(r.iter().map(|x| x * x).sum());
        v
    };
    let symmetry = ExtraMove { apply: &apply, invariants: &invariants };
    let mut reports = Vec::new();
    let mut crossing_sets = Vec::new();
    for (r, gauge) in [Gauge::G3, Gauge::Schrodinger].into_iter().enumerate() {
        let wf = if gauge == Gauge::G3 { g3_wf.clone() } else { s_wf.clone() };
        let (starts, diag) = sample_section_flux(
            gauge,
            &model,
            &wf,
            &toy.masses(),
            &tau,
            opts.start_level,
            &Bounds::cube(11, 4.0),
            opts.n_paths,
            opts.seed.wrapping_mul(2).wrapping_add(r as u64),
            &opts.sampler,
            &opts.scheme,
            Some(&symmetry),
        )?;
        let family = WaveFamily::stationary(&wf);
        let bohm = BohmOptions { scheme: opts.scheme, ..Default::default() };
        // Overshoot the reading section a little so every path crosses it.
        let target = opts.level + 0.5 * (opts.level - opts.start_level);
        let traced: Vec<Result<GeometricPath>> =
            starts.par_iter().map(|q| trace_to_level(gauge, &model, &family, q, &tau, target, opts.dt, 10_000, &bohm)).collect();
        let failed = traced.iter().filter(|p| p.is_err()).count();
        let paths: Vec<GeometricPath> = traced.into_iter().filter_map(|p| p.ok()).collect();
        let violations = paths.iter().filter(|p| !tau.monotone_on(p)).count();
        let clock_violation_fraction = violations as f64 / paths.len().max(1) as f64;
        if clock_violation_fraction > 0.01 {
            return Err(Error::ClockViolation { fraction: clock_violation_fraction });
        }
        let cm = crossing_measure(&paths, &vec![1.0; paths.len()], &tau, opts.level)?;

        let grid_wf = wf.clone();
        let key_axis = {
            let mut keys: Vec<f64> = cm.crossings.iter().map(|c| c.config.coords()[StationaryToy::KEY]).collect();
            keys.sort_by(f64::total_cmp);
            let bound = keys.first().map_or(1.0, |a| a.abs()).max(keys.last().map_or(1.0, |b| b.abs()));
            linspace(-bound, bound, opts.nodes)
        };
        let grid = ConditionalCdfGrid::build(vec![key_axis], |key| {
            conditional_born_distribution(gauge, &model, &grid_wf, &split, &toy.frame(opts.level, key[0]), &opts.probe, JacobianRoute::Invariant)
        })?;
        let pit_test = |sign: f64| -> (Vec<KsResult>, f64) {
            let pooled: Vec<KsResult> = (0..3)
                .map(|k| {
                    let u: Vec<f64> = cm.crossings
                        .iter()
                        .map(|c| {
                            let q = c.config.coords();
                            grid.cdf(&[sign * q[StationaryToy::KEY]], k, q[k])
                        })
                        .collect();
                    ks_one_sample(&u, |v| v.clamp(0.0, 1.0))
                })
                .collect();
            let aggregate = (3.0 * pooled.iter().map(|p| p.p_value).fold(1.0, f64::min)).min(1.0);
            (pooled, aggregate)
        };
        let (pooled, aggregate_p) = pit_test(1.0);
        let wrong_cell_aggregate_p = pit_test(-1.0).1;
        let n_cross = cm.crossings.len();
        crossing_sets.push(
            CROSSING_SETS.iter().map(|(_, pred)| proportion(cm.crossings.iter().filter(|c| pred(&c.config)).count(), n_cross)).collect::<Vec<_>>(),
        );
        reports.push(RouteReport {
            gauge: gauge.to_string(),
            pooled,
            aggregate_p,
            wrong_cell_aggregate_p,
            crossings: n_cross,
            failed_paths: failed,
            multi_crossing_fraction: cm.multi_crossing_fraction,
            clock_violation_fraction,
            recrossings: cm.recrossings,
            sampler: diag,
        });
    }
    let crossing_agreement: Vec<Comparison> =
        CROSSING_SETS.iter().enumerate().map(|(i, (name, _))| Comparison::new(name, crossing_sets[0][i], crossing_sets[1][i])).collect();
    let max_abs_z = crossing_agreement.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    let schrodinger = reports.pop().unwrap();
    let gauge3 = reports.pop().unwrap();
    let passed = gauge3.aggregate_p > opts.alpha
        && schrodinger.aggregate_p > opts.alpha
        && max_abs_z <= 3.0
        && current_max_rel <= 1e-6
        && gauge3.multi_crossing_fraction < 0.05
        && schrodinger.multi_crossing_fraction < 0.05;
    Ok(StationaryReport { gauge3, schrodinger, current_max_rel, crossing_agreement, max_abs_z, stationarity_residual: residual, passed })
}
