//! Guiding-law velocities, trajectories and quantum-equilibrium densities.

use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::classical::TrajectoryRecord;
use crate::error::{degenerate, invalid_param, Error, Result};
use crate::fd::FdScheme;
use crate::kinematics::*;
use crate::quantum::*;
use crate::sampling::{metropolis, Bounds, MetropolisOptions, SamplerDiagnostics};
use crate::scalar::Real;
use crate::stats::{ks_one_sample, ks_two_sample, KsResult};

/// Relative modulus below which a point counts as a node.
pub const EPS_NODE: f64 = 1e-8;

pub type WaveFamilyFn<T> = Arc<dyn Fn(&MassedConfiguration<T>, T) -> Complex<T> + Send + Sync>;

/// A time-dependent wave function `ψ(q, t)` in a fixed gauge.
#[derive(Clone)]
pub struct WaveFamily<T> {
    evaluator: WaveFamilyFn<T>,
    pub gauge: Gauge,
    pub smoothness_radius: T,
}

impl<T: Real> WaveFamily<T> {
    /// G1 families are probed for invariance at `t = 0`.
    pub fn new(evaluator: WaveFamilyFn<T>, gauge: Gauge, smoothness_radius: T, probes: &[MassedConfiguration<T>]) -> Result<Self> {
        let fam = Self { evaluator, gauge, smoothness_radius };
        let e = fam.evaluator.clone();
        WaveFunctionModel::new(Arc::new(move |c| e(c, T::zero())), gauge, smoothness_radius, probes)?;
        Ok(fam)
    }

    pub fn stationary(wf: &WaveFunctionModel<T>) -> Self {
        let e = wf.evaluator.clone();
        Self { evaluator: Arc::new(move |c, _| e(c)), gauge: wf.gauge, smoothness_radius: wf.smoothness_radius }
    }

    pub fn at(&self, t: T) -> WaveFunctionModel<T> {
        let e = self.evaluator.clone();
        WaveFunctionModel::unchecked(Arc::new(move |c| e(c, t)), self.gauge, self.smoothness_radius)
    }
}

/// Guiding velocity. Gauges 1-3: `Im(f^{-1} m^{-1} ∂ψ / ψ)`; Schrödinger gauge: `Im(m^{-1} ∂ψ / ψ)`.
pub fn bohm_velocity<T: Real>(
    gauge: Gauge,
    model: &ConformalModel<T>,
    wf: &WaveFunctionModel<T>,
    cfg: &MassedConfiguration<T>,
    scheme: &FdScheme<T>,
) -> Result<TangentVector<T>> {
    wf.require(gauge)?;
    let psi = wf.eval(cfg)?;
    let grad = fd_gradient(wf, cfg, scheme)?;
    let gnorm = grad.iter().map(|g| g.norm_sqr()).fold(T::zero(), |a, b| a + b).sqrt();
    let local = psi.norm() + scale_moment(cfg).sqrt() * gnorm;
    if !(psi.norm() > T::of(EPS_NODE) * local) {
        return Err(Error::NodalPoint { modulus: psi.norm().as_f64(), threshold: (T::of(EPS_NODE) * local).as_f64() });
    }
    let factor = match gauge {
        Gauge::Schrodinger => T::one(),
        _ => conformal_factor(model, cfg)?.recip(),
    };
    Ok(TangentVector::new(grad.iter().enumerate().map(|(i, g)| factor * (g / psi).im / cfg.coord_mass(i)).collect()))
}

/// Options for Bohmian trajectory integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BohmOptions<T> {
    pub scheme: FdScheme<T>,
    pub t0: T,
    /// Multiplies the velocity field; `1` is the guiding law. Other values serve as negative controls.
    pub velocity_scale: T,
}

impl<T: Real> Default for BohmOptions<T> {
    fn default() -> Self {
        Self { scheme: FdScheme::new(T::of(1e-3), 4, false).unwrap(), t0: T::zero(), velocity_scale: T::one() }
    }
}

/// RK4 integration of the guiding equation. Aborts with a partial record at nodes.
pub fn integrate_bohm<T: Real>(
    gauge: Gauge,
    model: &ConformalModel<T>,
    family: &WaveFamily<T>,
    cfg0: &MassedConfiguration<T>,
    dt: T,
    steps: usize,
    opts: &BohmOptions<T>,
) -> Result<TrajectoryRecord<T>> {
    if !(dt != T::zero()) || !dt.is_finite() {
        return Err(invalid_param("dt", "time step must be finite and non-zero"));
    }
    let vel = |q: &MassedConfiguration<T>, t: T| -> Result<Vec<T>> {
        Ok(bohm_velocity(gauge, model, &family.at(t), q, &opts.scheme)?.components.into_iter().map(|v| v * opts.velocity_scale).collect())
    };
    let v0 = vel(cfg0, opts.t0)?;
    let mut rec = TrajectoryRecord {
        times: vec![opts.t0],
        configs: vec![cfg0.clone()],
        velocities: vec![TangentVector::new(v0.clone())],
        diagnostics: Vec::new(),
        aborted: None,
    };
    let (mut q, mut v, mut t) = (cfg0.clone(), v0, opts.t0);
    let half = dt / T::of(2.0);
    for _ in 0..steps {
        let step = (|| -> Result<(MassedConfiguration<T>, Vec<T>)> {
            let k1 = &v;
            let k2 = vel(&q.displaced(k1, half), t + half)?;
            let k3 = vel(&q.displaced(&k2, half), t + half)?;
            let k4 = vel(&q.displaced(&k3, dt), t + dt)?;
            let incr: Vec<T> = (0..k1.len()).map(|i| (k1[i] + T::of(2.0) * (k2[i] + k3[i]) + k4[i]) / T::of(6.0)).collect();
            let next = q.displaced(&incr, dt);
            let vn = vel(&next, t + dt)?;
            Ok((next, vn))
        })();
        match step {
            Ok((next, vn)) => {
                t += dt;
                q = next;
                v = vn;
                rec.times.push(t);
                rec.configs.push(q.clone());
                rec.velocities.push(TangentVector::new(v.clone()));
            }
            Err(e) => {
                rec.aborted = Some(e);
                break;
            }
        }
    }
    Ok(rec)
}

/// Reparametrizes a stationary gauge-3 trajectory by `ds = dt / f(Q)`, the
/// parametrization of the Schrödinger-gauge guiding equation. Positions are unchanged.
pub fn random_time_change<T: Real>(model: &ConformalModel<T>, traj: &TrajectoryRecord<T>) -> Result<TrajectoryRecord<T>> {
    let f: Vec<T> = traj.configs.iter().map(|c| conformal_factor(model, c)).collect::<Result<_>>()?;
    let mut out = traj.clone();
    out.diagnostics.clear();
    let mut s = traj.times.first().copied().unwrap_or(T::zero());
    for k in 0..traj.len() {
        if k > 0 {
            s += (traj.times[k] - traj.times[k - 1]) * (f[k].recip() + f[k - 1].recip()) / T::of(2.0);
        }
        out.times[k] = s;
        out.velocities[k] = traj.velocities[k].scaled(f[k]);
    }
    Ok(out)
}

/// Lebesgue density of the quantum-equilibrium measure:
/// `|ψ|² 𝔍^{-1} f^{n/2}`, `|ψ|² f^{n/2}`, `|ψ|²`, `|ψ|²` for G1, G2, G3, S.
pub fn equilibrium_density<T: Real>(
    gauge: Gauge,
    model: &ConformalModel<T>,
    wf: &WaveFunctionModel<T>,
    cfg: &MassedConfiguration<T>,
    route: JacobianRoute,
) -> Result<T> {
    wf.require(gauge)?;
    let rho = wf.eval(cfg)?.norm_sqr();
    let k = T::of(cfg.dim() as f64 / 2.0);
    Ok(match gauge {
        Gauge::G1 => rho * conformal_factor(model, cfg)?.powf(k) / jacobian(route, model, cfg)?,
        Gauge::G2 => rho * conformal_factor(model, cfg)?.powf(k),
        Gauge::G3 | Gauge::Schrodinger => rho,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityResidual {
    pub time_derivative: f64,
    pub divergence: f64,
    pub residual: f64,
}

impl ContinuityResidual {
    pub fn relative(&self) -> f64 {
        self.residual / self.time_derivative.abs().max(self.divergence.abs()).max(f64::MIN_POSITIVE)
    }
}

/// `∂ρ/∂t + div(ρ v)` at time `t`, with a central difference of width `dt` in time
/// and central differences of the current in space.
#[allow(clippy::too_many_arguments)]
pub fn continuity_residual(
    model: &ConformalModel<f64>,
    gauge: Gauge,
    family: &WaveFamily<f64>,
    t: f64,
    cfg: &MassedConfiguration<f64>,
    dt: f64,
    scheme: &FdScheme<f64>,
    route: JacobianRoute,
) -> Result<ContinuityResidual> {
    let rho = |c: &MassedConfiguration<f64>, s: f64| equilibrium_density(gauge, model, &family.at(s), c, route);
    let drho = (rho(cfg, t + dt / 2.0)? - rho(cfg, t - dt / 2.0)?) / dt;
    let wf = family.at(t);
    let h = scheme.step(cfg);
    let inner = FdScheme { h: scheme.h / 10.0, ..*scheme };
    let mut div = 0.0;
    let mut work = cfg.clone();
    for i in 0..cfg.dim() {
        let x0 = cfg.coords()[i];
        let current = |dx: f64, w: &mut MassedConfiguration<f64>| -> Result<f64> {
            w.coords_mut()[i] = x0 + dx;
            let v = bohm_velocity(gauge, model, &wf, w, &inner)?.components[i];
            Ok(rho(w, t)? * v)
        };
        let d = if scheme.order == 4 {
            let (p1, m1) = (current(h, &mut work)?, current(-h, &mut work)?);
            let (p2, m2) = (current(2.0 * h, &mut work)?, current(-2.0 * h, &mut work)?);
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
        } else {
            (current(h, &mut work)? - current(-h, &mut work)?) / (2.0 * h)
        };
        work.coords_mut()[i] = x0;
        div += d;
    }
    Ok(ContinuityResidual { time_derivative: drho, divergence: div, residual: (drho + div).abs() })
}

/// Metropolis samples of the equilibrium density on a box in flat coordinates.
#[allow(clippy::too_many_arguments)]
pub fn sample_equilibrium(
    gauge: Gauge,
    model: &ConformalModel<f64>,
    wf: &WaveFunctionModel<f64>,
    masses: &[f64],
    bounds: &Bounds,
    n: usize,
    seed: u64,
    opts: &MetropolisOptions,
    route: JacobianRoute,
) -> Result<(Vec<MassedConfiguration<f64>>, SamplerDiagnostics)> {
    wf.require(gauge)?;
    if bounds.dim() != 3 * masses.len() {
        return Err(Error::DimensionMismatch { expected: 3 * masses.len(), got: bounds.dim() });
    }
    let density = |x: &[f64]| -> f64 {
        MassedConfiguration::from_flat(x.to_vec(), masses.to_vec())
            .and_then(|c| equilibrium_density(gauge, model, wf, &c, route))
            .unwrap_or(0.0)
    };
    let (xs, diag) = metropolis(&density, bounds, n, seed, opts)?;
    let cfgs = xs.into_iter().map(|x| MassedConfiguration::from_flat(x, masses.to_vec())).collect::<Result<_>>()?;
    Ok((cfgs, diag))
}

/// Reference distribution at the final time.
pub enum Reference<'a> {
    /// Marginal CDF of flat coordinate `i`.
    Analytic(&'a (dyn Fn(usize, f64) -> f64 + Sync)),
    /// Independent Metropolis sample of the final-time density.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivarianceOptions {
    pub n: usize,
    pub t_final: f64,
    pub dt: f64,
    pub seed: u64,
    pub route: JacobianRoute,
    pub bohm: BohmOptions<f64>,
    pub sampler: MetropolisOptions,
    /// Significance level for every per-coordinate test.
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport {
    pub ks: Vec<KsResult>,
    pub min_p: f64,
    pub transported: usize,
    pub excluded: usize,
    pub sampler: SamplerDiagnostics,
    pub passed: bool,
}

/// Samples the equilibrium density at `t0`, transports every sample with the
/// guiding law to `t_final`, and tests each flat-coordinate marginal against the
/// equilibrium density at `t_final`.
pub fn equivariance_check(
    model: &ConformalModel<f64>,
    gauge: Gauge,
    family: &WaveFamily<f64>,
    masses: &[f64],
    bounds: &Bounds,
    reference: Reference<'_>,
    opts: &EquivarianceOptions,
) -> Result<EquivarianceReport> {
    let t0 = opts.bohm.t0;
    let span = opts.t_final - t0;
    let steps = (span / opts.dt).abs().round().max(1.0) as usize;
    let dt = span / steps as f64;
    let (start, sampler) = sample_equilibrium(gauge, model, &family.at(t0), masses, bounds, opts.n, opts.seed, &opts.sampler, opts.route)?;
    let ends: Vec<Option<MassedConfiguration<f64>>> = start
        .par_iter()
        .map(|c| match integrate_bohm(gauge, model, family, c, dt, steps, &opts.bohm) {
            Ok(rec) if rec.aborted.is_none() => rec.configs.last().cloned(),
            _ => None,
        })
        .collect();
    let kept: Vec<&MassedConfiguration<f64>> = ends.iter().flatten().collect();
    let excluded = ends.len() - kept.len();
    if kept.is_empty() {
        return Err(degenerate("every transported sample failed"));
    }
    let dim = 3 * masses.len();
    let reference_samples = match reference {
        Reference::Sampled => {
            let seed = opts.seed ^ 0x5eed_0f7e57;
            Some(sample_equilibrium(gauge, model, &family.at(opts.t_final), masses, bounds, opts.n, seed, &opts.sampler, opts.route)?.0)
        }
        Reference::Analytic(_) => None,
    };
    let mut ks = Vec::with_capacity(dim);
    for i in 0..dim {
        let xs: Vec<f64> = kept.iter().map(|c| c.coords()[i]).collect();
        ks.push(match (&reference, &reference_samples) {
            (Reference::Analytic(cdf), _) => ks_one_sample(&xs, |x| cdf(i, x)),
            (_, Some(r)) => ks_two_sample(&xs, &r.iter().map(|c| c.coords()[i]).collect::<Vec<_>>()),
            _ => unreachable!(),
        });
    }
    let min_p = ks.iter().map(|k| k.p_value).fold(1.0, f64::min);
    Ok(EquivarianceReport { passed: min_p > opts.alpha, ks, min_p, transported: kept.len(), excluded, sampler })
}

/// Free Gaussian packets in the `f ≡ 1` toy: each flat coordinate `x_i` of mass
/// `m_i` evolves as an independent free packet with initial center `x0_i`,
/// momentum `p0_i` and width `σ0`.
pub fn free_gaussian_family(masses: &[f64], x0: Vec<f64>, p0: Vec<f64>, sigma0: f64) -> Result<WaveFamily<f64>> {
    let n = 3 * masses.len();
    if x0.len() != n || p0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len().min(p0.len()) });
    }
    if !(sigma0 > 0.0) {
        return Err(invalid_param("sigma0", "must be positive"));
    }
    let eval: WaveFamilyFn<f64> = Arc::new(move |c: &MassedConfiguration<f64>, t: f64| {
        let mut expo = Complex::new(0.0, 0.0);
        let mut pref = Complex::new(1.0, 0.0);
        for (i, &x) in c.coords().iter().enumerate() {
            let m = c.coord_mass(i);
            let a = Complex::new(1.0, t / (2.0 * m * sigma0 * sigma0));
            let d = x - x0[i] - p0[i] * t / m;
            expo += -(d * d) / (a * 4.0 * sigma0 * sigma0) + Complex::i() * (p0[i] * (x - x0[i]) - p0[i] * p0[i] * t / (2.0 * m));
            pref *= a;
        }
        expo.exp() / pref.sqrt()
    });
    WaveFamily::new(eval, Gauge::Schrodinger, 1.0, &[])
}

/// Marginal CDF of coordinate `i` of [`free_gaussian_family`] at time `t`.
pub fn free_gaussian_marginal_cdf(m: f64, x0: f64, p0: f64, sigma0: f64, t: f64, x: f64) -> f64 {
    let s = sigma0 * (1.0 + (t / (2.0 * m * sigma0 * sigma0)).powi(2)).sqrt();
    crate::stats::normal_cdf(x, x0 + p0 * t / m, s)
}

/// Symmetric Hausdorff distance between two polylines in the mass-weighted metric.
pub fn hausdorff_distance(a: &[MassedConfiguration<f64>], b: &[MassedConfiguration<f64>]) -> f64 {
    fn one_sided(a: &[MassedConfiguration<f64>], b: &[MassedConfiguration<f64>]) -> f64 {
        a.iter()
            .map(|p| {
                if b.len() == 1 {
                    return seg_dist(p, &b[0], &b[0]);
                }
                b.windows(2).map(|w| seg_dist(p, &w[0], &w[1])).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
    one_sided(a, b).max(one_sided(b, a))
}

fn seg_dist(p: &MassedConfiguration<f64>, a: &MassedConfiguration<f64>, b: &MassedConfiguration<f64>) -> f64 {
    let m: Vec<f64> = (0..p.dim()).map(|i| p.coord_mass(i)).collect();
    let ab: Vec<f64> = b.coords().iter().zip(a.coords()).map(|(x, y)| x - y).collect();
    let ap: Vec<f64> = p.coords().iter().zip(a.coords()).map(|(x, y)| x - y).collect();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).zip(&m).map(|((x, y), w)| w * x * y).sum::<f64>();
    let l2 = dot(&ab, &ab);
    let s = if l2 > 0.0 { (dot(&ap, &ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    let d: Vec<f64> = ap.iter().zip(&ab).map(|(x, y)| x - s * y).collect();
    dot(&d, &d).sqrt()
}

/// Mass-weighted Euclidean length of a polyline.
pub fn polyline_length(a: &[MassedConfiguration<f64>]) -> f64 {
    a.windows(2)
        .map(|w| {
            w[1].coords().iter().zip(w[0].coords()).enumerate().map(|(i, (x, y))| w[0].coord_mass(i) * (x - y).powi(2)).sum::<f64>().sqrt()
        })
        .sum()
}
