//! Pointwise finite-difference operators of the quantum gauge chain.
//!
//! `ħ = 1`. All Laplacians use the conservative stencil of [`flux_divergence`]
//! with mass-weighted coordinates, so `∇² = Σ_i m_i^{-1} ∂_i²`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::bundle::{shape_jacobian, shape_jacobian_invariant};
use crate::error::{degenerate, invalid_param, Error, Result};
use crate::fd::{gradient, flux_divergence, FdScheme};
use crate::kinematics::*;
use crate::scalar::Real;

pub type WaveFn<T> = Arc<dyn Fn(&MassedConfiguration<T>) -> Complex<T> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gauge {
    /// Lift of a shape wave function; similarity invariant.
    G1,
    G2,
    G3,
    Schrodinger,
}

impl Gauge {
    pub const ALL: [Gauge; 4] = [Gauge::G1, Gauge::G2, Gauge::G3, Gauge::Schrodinger];
}

impl fmt::Display for Gauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gauge::G1 => "G1",
            Gauge::G2 => "G2",
            Gauge::G3 => "G3",
            Gauge::Schrodinger => "S",
        })
    }
}

/// Which shape Jacobian enters the canonical lift and `V1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum JacobianRoute {
    /// `𝔍_B = L^3 𝔍`, similarity invariant.
    #[default]
    Invariant,
    /// `𝔍 = L f^{7/2} sqrt(det M)`.
    Plain,
}

pub fn jacobian<T: Real>(route: JacobianRoute, model: &ConformalModel<T>, cfg: &MassedConfiguration<T>) -> Result<T> {
    match route {
        JacobianRoute::Invariant => shape_jacobian_invariant(model, cfg),
        JacobianRoute::Plain => shape_jacobian(model, cfg),
    }
}

#[derive(Clone)]
pub struct WaveFunctionModel<T> {
    pub(crate) evaluator: WaveFn<T>,
    pub gauge: Gauge,
    /// Radius of a ball around evaluation points inside which the evaluator is smooth.
    pub smoothness_radius: T,
}

impl<T: Real> fmt::Debug for WaveFunctionModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WaveFunctionModel").field("gauge", &self.gauge).field("smoothness_radius", &self.smoothness_radius).finish()
    }
}

impl<T: Real> WaveFunctionModel<T> {
    /// G1 models are checked for similarity invariance at each probe under a few
    /// fixed random similarities.
    pub fn new(evaluator: WaveFn<T>, gauge: Gauge, smoothness_radius: T, probes: &[MassedConfiguration<T>]) -> Result<Self> {
        if !(smoothness_radius > T::zero()) {
            return Err(invalid_param("smoothness_radius", "must be positive"));
        }
        let wf = Self { evaluator, gauge, smoothness_radius };
        if gauge == Gauge::G1 {
            if probes.is_empty() {
                return Err(invalid_param("probes", "G1 wave functions need at least one probe configuration"));
            }
            let mut worst = 0.0f64;
            for (k, q) in probes.iter().enumerate() {
                let base = wf.eval(q)?;
                for t in probe_similarities::<T>(k as u64) {
                    let moved = wf.eval(&apply_similarity(q, &t))?;
                    let d = (moved - base).norm().as_f64() / base.norm().as_f64().max(1.0);
                    worst = worst.max(d);
                }
            }
            if worst > 1e-8 {
                return Err(Error::NotInvariant(worst));
            }
        }
        Ok(wf)
    }

    /// Skips the invariance probe; for internally derived models.
    pub(crate) fn unchecked(evaluator: WaveFn<T>, gauge: Gauge, smoothness_radius: T) -> Self {
        Self { evaluator, gauge, smoothness_radius }
    }

    pub fn eval(&self, cfg: &MassedConfiguration<T>) -> Result<Complex<T>> {
        let v = (self.evaluator)(cfg);
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(degenerate("wave function is not finite here"));
        }
        Ok(v)
    }

    pub(crate) fn check_step(&self, cfg: &MassedConfiguration<T>, scheme: &FdScheme<T>) -> Result<()> {
        let reach = scheme.step(cfg) * T::of(if scheme.order == 4 { 2.0 } else { 1.0 });
        if reach > self.smoothness_radius {
            return Err(Error::StepTooLarge { h: reach.as_f64(), radius: self.smoothness_radius.as_f64() });
        }
        Ok(())
    }

    pub(crate) fn require(&self, gauge: Gauge) -> Result<()> {
        if self.gauge != gauge {
            return Err(Error::GaugeMismatch { expected: gauge.to_string(), got: self.gauge.to_string() });
        }
        Ok(())
    }
}

fn probe_similarities<T: Real>(k: u64) -> Vec<SimilarityTransform<T>> {
    use rand::Rng;
    let mut rng = crate::rng::stream(k, "quantum/invariance-probe", 0);
    (0..3)
        .map(|_| {
            let q: [T; 4] = std::array::from_fn(|_| T::of(rng.gen_range(-1.0..1.0)));
            let a: [T; 3] = std::array::from_fn(|_| T::of(rng.gen_range(-2.0..2.0)));
            SimilarityTransform::from_quaternion(q, a, T::of(rng.gen_range(0.5..2.0)))
        })
        .collect()
}

/// Central-difference gradient of the wave function in flat coordinates.
pub fn fd_gradient<T: Real>(wf: &WaveFunctionModel<T>, cfg: &MassedConfiguration<T>, scheme: &FdScheme<T>) -> Result<Vec<Complex<T>>> {
    wf.check_step(cfg, scheme)?;
    gradient(|c| wf.eval(c), cfg, scheme)
}

fn half_dim<T: Real>(cfg: &MassedConfiguration<T>) -> T {
    T::of(cfg.dim() as f64 / 2.0)
}

/// `Δ_g ψ = f^{-n/2} ∇·(f^{n/2-1} ∇ψ)` for an arbitrary function `psi`.
pub fn laplace_beltrami_fn<T: Real>(
    model: &ConformalModel<T>,
    psi: impl FnMut(&MassedConfiguration<T>) -> Result<Complex<T>>,
    cfg: &MassedConfiguration<T>,
    scheme: &FdScheme<T>,
) -> Result<Complex<T>> {
    let k = half_dim(cfg);
    let div = flux_divergence(|c| Ok(conformal_factor(model, c)?.powf(k - T::one())), psi, cfg, scheme)?;
    Ok(div * conformal_factor(model, cfg)?.powf(-k))
}

pub fn laplace_beltrami_g<T: Real>(
    model: &ConformalModel<T>,
    wf: &WaveFunctionModel<T>,
    cfg: &MassedConfiguration<T>,
    scheme: &FdScheme<T>,
) -> Result<Complex<T>> {
    regular_invariants(cfg)?;
    wf.check_step(cfg, scheme)?;
    laplace_beltrami_fn(model, |c| wf.eval(c), cfg, scheme)
}

/// `𝔍 div_g(𝔍^{-1} grad_g ψ)` for an arbitrary function `psi`.
pub fn canonical_lift_fn<T: Real>(
    model: &ConformalModel<T>,
    route: JacobianRoute,
    psi: impl FnMut(&MassedConfiguration<T>) -> Result<Complex<T>>,
    cfg: &MassedConfiguration<T>,
    scheme: &FdScheme<T>,
) -> Result<Complex<T>> {
    let k = half_dim(cfg);
    let a = |c: &MassedConfiguration<T>| Ok(conformal_factor(model, c)?.powf(k - T::one()) / jacobian(route, model, c)?);
    let div = flux_divergence(a, psi, cfg, scheme)?;
    Ok(div * jacobian(route, model, cfg)? * conformal_factor(model, cfg)?.powf(-k))
}

/// Canonical lift `Δ̂_B ψ` of the shape Laplacian, on G1 wave functions.
pub fn lifted_shape_laplacian<T: Real>(
    model: &ConformalModel<T>,
    wf: &WaveFunctionModel<T>,
    cfg: &MassedConfiguration<T>,
    scheme: &FdScheme<T>,
    route: JacobianRoute,
) -> Result<Complex<T>> {
    wf.require(Gauge::G1)?;
    regular_invariants(cfg)?;
    wf.check_step(cfg, scheme)?;
    canonical_lift_fn(model, route, |c| wf.eval(c), cfg, scheme)
}

/// `V1 = -(1/2) Δ̂_B(𝔍^{1/2}) / 𝔍^{1/2}`.
pub fn potential_v1<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>, scheme: &FdScheme<T>, route: JacobianRoute) -> Result<T> {
    let sqrt_j = |c: &MassedConfiguration<T>| Ok(Complex::from(jacobian(route, model, c)?.sqrt()));
    let lap = canonical_lift_fn(model, route, sqrt_j, cfg, scheme)?;
    Ok(-lap.re / (T::of(2.0) * jacobian(route, model, cfg)?.sqrt()))
}

/// `f^{-p}` applied through `Δ_g` and multiplied back: `f^{p} Δ_g f^{-p}`.
fn conjugated_unit<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>, scheme: &FdScheme<T>, p: T) -> Result<T> {
    regular_invariants(cfg)?;
    let lap = laplace_beltrami_fn(model, |c| Ok(Complex::from(conformal_factor(model, c)?.powf(-p))), cfg, scheme)?;
    Ok(lap.re * conformal_factor(model, cfg)?.powf(p))
}

/// `V2 = -(1/2) f^{n/4} Δ_g f^{-n/4}`.
pub fn potential_v2<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>, scheme: &FdScheme<T>) -> Result<T> {
    let p = T::of(cfg.dim() as f64 / 4.0);
    Ok(-conjugated_unit(model, cfg, scheme, p)? / T::of(2.0))
}

fn curvature_exponent<T: Real>(cfg: &MassedConfiguration<T>) -> T {
    T::of((cfg.dim() as f64 - 2.0) / 4.0)
}

/// `R_g = (4(n-1)/(n-2)) f^{(n-2)/4} Δ_g f^{-(n-2)/4}`.
pub fn scalar_curvature<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>, scheme: &FdScheme<T>) -> Result<T> {
    let n = cfg.dim() as f64;
    Ok(T::of(4.0 * (n - 1.0) / (n - 2.0)) * conjugated_unit(model, cfg, scheme, curvature_exponent(cfg))?)
}

/// `V3 = -(1/2) f^{(n+2)/4} Δ_g f^{-(n-2)/4} = -(1/2) (n-2)/(4(n-1)) f R_g`.
pub fn potential_v3<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>, scheme: &FdScheme<T>) -> Result<T> {
    let f = conformal_factor(model, cfg)?;
    Ok(-f * conjugated_unit(model, cfg, scheme, curvature_exponent(cfg))? / T::of(2.0))
}

/// `U = f (V1 - ℰ) - (1/8) (n-2)/(n-1) f R_g`.
pub fn potential_u<T: Real>(
    model: &ConformalModel<T>,
    cfg: &MassedConfiguration<T>,
    scheme: &FdScheme<T>,
    route: JacobianRoute,
    energy: T,
) -> Result<T> {
    let f = conformal_factor(model, cfg)?;
    let v1 = potential_v1(model, cfg, scheme, route)?;
    Ok(f * (v1 - energy) + potential_v3(model, cfg, scheme)?)
}

/// Settings shared by the Hamiltonians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorSettings<T> {
    pub scheme: FdScheme<T>,
    pub route: JacobianRoute,
    /// `ℰ`, entering only `H_S`.
    pub energy: T,
}

impl<T: Real> Default for OperatorSettings<T> {
    fn default() -> Self {
        Self { scheme: FdScheme::default(), route: JacobianRoute::Invariant, energy: T::zero() }
    }
}

/// Applies `H1 = -(1/2) Δ̂_B`, `H2 = -(1/2) Δ_g + V1`, `H3 = -(1/2) ∇·f^{-1}∇ + V1 + V2`
/// or `H_S = -(1/2) ∇² + U`, matching `gauge` against the wave function's tag.
pub fn hamiltonian_apply<T: Real>(
    gauge: Gauge,
    model: &ConformalModel<T>,
    wf: &WaveFunctionModel<T>,
    cfg: &MassedConfiguration<T>,
    settings: &OperatorSettings<T>,
) -> Result<Complex<T>> {
    wf.require(gauge)?;
    regular_invariants(cfg)?;
    wf.check_step(cfg, &settings.scheme)?;
    let scheme = &settings.scheme;
    let half = T::of(0.5);
    let psi = |c: &MassedConfiguration<T>| wf.eval(c);
    match gauge {
        Gauge::G1 => Ok(canonical_lift_fn(model, settings.route, psi, cfg, scheme)? * (-half)),
        Gauge::G2 => {
            let v1 = potential_v1(model, cfg, scheme, settings.route)?;
            Ok(laplace_beltrami_fn(model, psi, cfg, scheme)? * (-half) + wf.eval(cfg)? * v1)
        }
        Gauge::G3 => {
            let kin = flux_divergence(|c| Ok(conformal_factor(model, c)?.recip()), psi, cfg, scheme)?;
            let v = potential_v1(model, cfg, scheme, settings.route)? + potential_v2(model, cfg, scheme)?;
            Ok(kin * (-half) + wf.eval(cfg)? * v)
        }
        Gauge::Schrodinger => {
            let kin = flux_divergence(|_| Ok(T::one()), psi, cfg, scheme)?;
            let u = potential_u(model, cfg, scheme, settings.route, settings.energy)?;
            Ok(kin * (-half) + wf.eval(cfg)? * u)
        }
    }
}

/// Factor taking a G1 wave function to `gauge`:
/// `1`, `𝔍^{-1/2}`, `f^{n/4} 𝔍^{-1/2}`, `f^{(n-2)/4} 𝔍^{-1/2}`.
pub fn gauge_factor<T: Real>(gauge: Gauge, model: &ConformalModel<T>, route: JacobianRoute, cfg: &MassedConfiguration<T>) -> Result<T> {
    if gauge == Gauge::G1 {
        return Ok(T::one());
    }
    let j = jacobian(route, model, cfg)?.sqrt().recip();
    let n = cfg.dim() as f64;
    Ok(match gauge {
        Gauge::G2 => j,
        Gauge::G3 => j * conformal_factor(model, cfg)?.powf(T::of(n / 4.0)),
        Gauge::Schrodinger => j * conformal_factor(model, cfg)?.powf(T::of((n - 2.0) / 4.0)),
        Gauge::G1 => unreachable!(),
    })
}

/// Re-expresses `wf` (tagged `from`) in gauge `to`.
pub fn gauge_transform_wavefunction<T: Real>(
    wf: &WaveFunctionModel<T>,
    from: Gauge,
    to: Gauge,
    model: &ConformalModel<T>,
    route: JacobianRoute,
) -> Result<WaveFunctionModel<T>> {
    wf.require(from)?;
    if from == to {
        return Ok(wf.clone());
    }
    let inner = wf.evaluator.clone();
    let model = model.clone();
    let eval: WaveFn<T> = Arc::new(move |c: &MassedConfiguration<T>| {
        let ratio = gauge_factor(to, &model, route, c).and_then(|a| gauge_factor(from, &model, route, c).map(|b| a / b));
        match ratio {
            Ok(r) => inner(c) * r,
            Err(_) => Complex::new(T::nan(), T::nan()),
        }
    });
    Ok(WaveFunctionModel::unchecked(eval, to, wf.smoothness_radius))
}

/// Samples of `(B ψ - A ψ) / ψ` over test functions and points.
#[derive(Debug, Clone, Serialize)]
pub struct PdoReport {
    /// `samples[p][k]`: quotient at point `p` for test function `k`.
    pub samples: Vec<Vec<f64>>,
    /// Mean over test functions at each point.
    pub multiplier: Vec<f64>,
    /// `B 1` at each point, when `A 1 = 0`.
    pub b_on_one: Vec<f64>,
    /// Largest relative spread across test functions at a point.
    pub spread: f64,
    /// Largest relative difference between the multiplier and `B 1`.
    pub unit_mismatch: f64,
}

/// Checks that two second-order operators with the same principal part differ by a
/// multiplication operator `D`, and that `D = B 1` when `A 1 = 0`.
pub fn pdo_difference_check<P, F>(
    op_a: impl Fn(&F, &P) -> Result<Complex<f64>>,
    op_b: impl Fn(&F, &P) -> Result<Complex<f64>>,
    eval: impl Fn(&F, &P) -> Result<Complex<f64>>,
    testfns: &[F],
    one: &F,
    points: &[P],
) -> Result<PdoReport> {
    if testfns.is_empty() || points.is_empty() {
        return Err(invalid_param("testfns", "need at least one test function and one point"));
    }
    let mut rep = PdoReport { samples: Vec::new(), multiplier: Vec::new(), b_on_one: Vec::new(), spread: 0.0, unit_mismatch: 0.0 };
    for p in points {
        let mut row = Vec::with_capacity(testfns.len());
        for t in testfns {
            let psi = eval(t, p)?;
            let d = (op_b(t, p)? - op_a(t, p)?) / psi;
            row.push(d.re);
        }
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let scale = mean.abs().max(1e-300);
        let spread = row.iter().fold(0.0f64, |m, x| m.max((x - mean).abs())) / scale;
        let b1 = (op_b(one, p)? - op_a(one, p)?) / eval(one, p)?;
        rep.spread = rep.spread.max(spread);
        rep.unit_mismatch = rep.unit_mismatch.max((b1.re - mean).abs() / scale);
        rep.samples.push(row);
        rep.multiplier.push(mean);
        rep.b_on_one.push(b1.re);
    }
    Ok(rep)
}
