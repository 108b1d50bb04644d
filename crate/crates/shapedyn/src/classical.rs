//! Classical motion in the Newton gauge and on shape space.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bundle::*;
use crate::error::{degenerate, invalid_param, Error, Result};
use crate::fd::partial;
use crate::kinematics::*;
use crate::scalar::*;

/// Relative step `h / L` of the finite-difference force.
pub const FORCE_STEP: f64 = 1e-5;

/// `-∇V = ∇f` for `V = -f`, by central differences with step `1e-5 L`.
/// With `richardson`, steps `h` and `h/2` are combined to fourth order.
pub fn newton_force_with<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>, richardson: bool) -> Result<TangentVector<T>> {
    let h = T::of(FORCE_STEP) * scale_moment(cfg).sqrt();
    let mut f = |c: &MassedConfiguration<T>| conformal_factor(model, c);
    let mut out = Vec::with_capacity(cfg.dim());
    for i in 0..cfg.dim() {
        let d: T = partial(&mut f, cfg, i, h, 2)?;
        if richardson {
            let d2: T = partial(&mut f, cfg, i, h / T::of(2.0), 2)?;
            out.push((T::of(4.0) * d2 - d) / T::of(3.0));
        } else {
            out.push(d);
        }
    }
    Ok(TangentVector::new(out))
}

pub fn newton_force<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>) -> Result<TangentVector<T>> {
    newton_force_with(model, cfg, false)
}

/// Accelerations `∇_α f / m_α`.
pub fn acceleration<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>) -> Result<TangentVector<T>> {
    let mut a = newton_force(model, cfg)?;
    for (i, x) in a.components.iter_mut().enumerate() {
        *x /= cfg.coord_mass(i);
    }
    Ok(a)
}

/// Conserved quantities of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics<T> {
    pub energy: T,
    pub potential: T,
    pub momentum: Vec3<T>,
    pub angular_momentum: Vec3<T>,
    pub dilational_momentum: T,
    pub shape_speed: T,
    /// `sqrt(Σ m |v|^2)`, used to make the momenta scale free.
    pub speed: T,
    /// `sqrt(Σ m |q|^2)` about the origin.
    pub radius: T,
}

pub fn diagnostics<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>, v: &TangentVector<T>) -> Result<Diagnostics<T>> {
    v.check_base(cfg)?;
    let f = conformal_factor(model, cfg)?;
    let m = cfg.masses();
    let mut p = [T::zero(); 3];
    let mut j = [T::zero(); 3];
    let mut d = T::zero();
    let mut kin = T::zero();
    let mut rad = T::zero();
    for (a, &ma) in m.iter().enumerate() {
        let q = cfg.position(a);
        let va = v.particle(a);
        p = add3(p, scale3(ma, va));
        j = add3(j, scale3(ma, cross3(q, va)));
        d += ma * dot3(q, va);
        kin += ma * dot3(va, va);
        rad += ma * dot3(q, q);
    }
    let shape_speed = shape_metric_norm(model, cfg, v)?;
    Ok(Diagnostics {
        energy: kin / T::of(2.0) - f,
        potential: -f,
        momentum: p,
        angular_momentum: j,
        dilational_momentum: d,
        shape_speed,
        speed: kin.sqrt(),
        radius: rad.sqrt(),
    })
}

/// Time-stamped states with diagnostics recomputed from each state.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord<T> {
    pub times: Vec<T>,
    pub configs: Vec<MassedConfiguration<T>>,
    pub velocities: Vec<TangentVector<T>>,
    /// Empty for Bohmian runs.
    pub diagnostics: Vec<Diagnostics<T>>,
    /// Reason the integration stopped early, if it did.
    pub aborted: Option<Error>,
}

impl<T: Real> TrajectoryRecord<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest scale-relative violation of `E = P = J = D = 0` along the record.
    pub fn drift(&self) -> DriftReport {
        let mut r = DriftReport::default();
        let m_sqrt = |d: &Diagnostics<T>| d.speed.as_f64();
        for (cfg, d) in self.configs.iter().zip(&self.diagnostics) {
            let total = cfg.total_mass().as_f64().sqrt();
            let v = m_sqrt(d);
            let rv = d.radius.as_f64() * v;
            r.energy = r.energy.max((d.energy / d.potential).abs().as_f64());
            r.momentum = r.momentum.max(norm3(d.momentum).as_f64() / (total * v));
            r.angular_momentum = r.angular_momentum.max(norm3(d.angular_momentum).as_f64() / rv);
            r.dilational_momentum = r.dilational_momentum.max(d.dilational_momentum.abs().as_f64() / rv);
        }
        r
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct DriftReport {
    pub energy: f64,
    pub momentum: f64,
    pub angular_momentum: f64,
    pub dilational_momentum: f64,
}

/// Random horizontal velocity at zero energy, deterministic in `seed`.
pub fn sample_horizontal_initial<T: Real>(model: &ConformalModel<T>, cfg0: &MassedConfiguration<T>, seed: u64) -> Result<TangentVector<T>> {
    let mut rng = crate::rng::stream(seed, "classical/horizontal-initial", 0);
    let raw: Vec<T> = (0..cfg0.dim()).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect();
    let f = conformal_factor(model, cfg0)?;
    let potential = -f;
    if !(potential < T::zero()) {
        return Err(Error::NoZeroEnergy(potential.as_f64()));
    }
    let h = horizontal_part(cfg0, &raw)?;
    let norm2 = mass_inner_slices(cfg0.masses(), &h, &h);
    if !(norm2 > T::zero()) {
        return Err(degenerate("horizontal projection of the random velocity vanished"));
    }
    // ½|v|² = f
    let s = (T::of(2.0) * f / norm2).sqrt();
    Ok(TangentVector::new(h.into_iter().map(|x| s * x).collect()))
}

/// Velocity Verlet in the Newton gauge, `m a = ∇f`.
pub fn integrate_newton_gauge<T: Real>(
    model: &ConformalModel<T>,
    cfg0: &MassedConfiguration<T>,
    v0: &TangentVector<T>,
    dt: T,
    steps: usize,
) -> Result<TrajectoryRecord<T>> {
    if !(dt != T::zero()) || !dt.is_finite() {
        return Err(invalid_param("dt", "time step must be finite and non-zero"));
    }
    v0.check_base(cfg0)?;
    let d0 = diagnostics(model, cfg0, v0)?;
    if (d0.energy / d0.potential).abs() > T::of(1e-6) {
        return Err(invalid_param("v0", format!("initial energy {} is not zero", d0.energy)));
    }
    let mut rec = TrajectoryRecord {
        times: vec![T::zero()],
        configs: vec![cfg0.clone()],
        velocities: vec![v0.clone()],
        diagnostics: vec![d0],
        aborted: None,
    };
    let mut q = cfg0.clone();
    let mut v = v0.components.clone();
    let mut a = acceleration(model, &q)?.components;
    let half = dt / T::of(2.0);
    for step in 1..=steps {
        for i in 0..v.len() {
            v[i] += half * a[i];
        }
        for (x, &vi) in q.coords_mut().iter_mut().zip(&v) {
            *x += dt * vi;
        }
        a = match acceleration(model, &q) {
            Ok(acc) => acc.components,
            Err(e) => {
                rec.aborted = Some(e);
                break;
            }
        };
        for i in 0..v.len() {
            v[i] += half * a[i];
        }
        let vt = TangentVector::new(v.clone());
        match diagnostics(model, &q, &vt) {
            Ok(d) => {
                rec.times.push(T::of(step as f64) * dt);
                rec.configs.push(q.clone());
                rec.velocities.push(vt);
                rec.diagnostics.push(d);
            }
            Err(e) => {
                rec.aborted = Some(e);
                break;
            }
        }
    }
    Ok(rec)
}

/// Reparametrizes a Newton-gauge record to constant shape speed `v_shape`,
/// using `dt'/dt = v / (sqrt(2) f)` with `t'` the Newton time.
pub fn invariant_gauge_time<T: Real>(model: &ConformalModel<T>, traj: &TrajectoryRecord<T>, v_shape: T) -> Result<TrajectoryRecord<T>> {
    if !(v_shape > T::zero()) {
        return Err(invalid_param("v_shape", "shape speed must be positive"));
    }
    let sqrt2 = T::of(2.0).sqrt();
    let rates: Vec<T> = traj
        .configs
        .iter()
        .map(|c| conformal_factor(model, c).map(|f| sqrt2 * f / v_shape))
        .collect::<Result<_>>()?;
    let mut out = traj.clone();
    let mut t = T::zero();
    for k in 0..traj.len() {
        if k > 0 {
            t += (traj.times[k] - traj.times[k - 1]) * (rates[k] + rates[k - 1]) / T::of(2.0);
        }
        out.times[k] = t;
        out.velocities[k] = traj.velocities[k].scaled(T::one() / rates[k]);
        out.diagnostics[k] = diagnostics(model, &out.configs[k], &out.velocities[k])?;
    }
    Ok(out)
}

/// A curve in the Bookstein chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapePath<T> {
    pub points: Vec<ShapePoint<T>>,
    pub params: Option<Vec<T>>,
    pub tangents: Option<Vec<Complex<T>>>,
}

impl<T: Real> ShapePath<T> {
    pub fn from_points(points: Vec<ShapePoint<T>>) -> Self {
        Self { points, params: None, tangents: None }
    }

    /// Cumulative shape-metric arclength, using the metric at segment midpoints.
    pub fn arclengths(&self, model: &ConformalModel<T>, masses: &[T]) -> Result<Vec<T>> {
        let mut s = vec![T::zero()];
        for w in self.points.windows(2) {
            let mid = ShapePoint::new((w[0].re() + w[1].re()) / T::of(2.0), (w[0].im() + w[1].im()) / T::of(2.0))?;
            let g = pullback_shape_metric(model, mid, masses)?;
            let d = w[1].z - w[0].z;
            let q = g[0][0] * d.re * d.re + T::of(2.0) * g[0][1] * d.re * d.im + g[1][1] * d.im * d.im;
            let last = *s.last().unwrap();
            s.push(last + q.max(T::zero()).sqrt());
        }
        Ok(s)
    }

    /// Chart position at arclength `target` by linear interpolation between samples.
    pub fn at_arclength(&self, arclengths: &[T], target: T) -> Complex<T> {
        let k = match arclengths.iter().position(|&s| s >= target) {
            Some(0) => return self.points[0].z,
            Some(k) => k,
            None => return self.points.last().unwrap().z,
        };
        let (s0, s1) = (arclengths[k - 1], arclengths[k]);
        let w = if s1 > s0 { (target - s0) / (s1 - s0) } else { T::zero() };
        self.points[k - 1].z * (T::one() - w) + self.points[k].z * w
    }
}

pub fn project_to_shape<T: Real>(traj: &TrajectoryRecord<T>) -> Result<ShapePath<T>> {
    let mut pts = Vec::with_capacity(traj.len());
    for (k, c) in traj.configs.iter().enumerate() {
        let z = bookstein_shape(c).map_err(|e| degenerate(format!("step {k}: {e}")))?;
        pts.push(z);
    }
    Ok(ShapePath { points: pts, params: Some(traj.times.clone()), tangents: None })
}

fn metric_at<T: Real>(model: &ConformalModel<T>, masses: &[T], z: Complex<T>) -> Result<[[T; 2]; 2]> {
    pullback_shape_metric(model, ShapePoint::new(z.re, z.im)?, masses)
}

/// `Γ^k_ij` of `G(z)` with fourth-order central differences.
pub fn christoffel<T: Real>(model: &ConformalModel<T>, masses: &[T], z: Complex<T>) -> Result<[[[T; 2]; 2]; 2]> {
    let delta = T::of(1e-3) * z.im.min(T::one());
    let g = metric_at(model, masses, z)?;
    let mut dg = [[[T::zero(); 2]; 2]; 2]; // dg[l][i][j] = ∂_l G_ij
    for (l, dgl) in dg.iter_mut().enumerate() {
        let e = if l == 0 { Complex::new(delta, T::zero()) } else { Complex::new(T::zero(), delta) };
        let p1 = metric_at(model, masses, z + e)?;
        let m1 = metric_at(model, masses, z - e)?;
        let p2 = metric_at(model, masses, z + e * T::of(2.0))?;
        let m2 = metric_at(model, masses, z - e * T::of(2.0))?;
        for i in 0..2 {
            for j in 0..2 {
                dgl[i][j] = (T::of(8.0) * (p1[i][j] - m1[i][j]) - (p2[i][j] - m2[i][j])) / (T::of(12.0) * delta);
            }
        }
    }
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    if !(det > T::zero()) {
        return Err(degenerate("shape metric is not positive definite"));
    }
    let ginv = [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]];
    let mut gamma = [[[T::zero(); 2]; 2]; 2];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let mut s = T::zero();
                for l in 0..2 {
                    s += ginv[k][l] * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]);
                }
                gamma[k][i][j] = s / T::of(2.0);
            }
        }
    }
    Ok(gamma)
}

fn geodesic_rhs<T: Real>(model: &ConformalModel<T>, masses: &[T], z: Complex<T>, v: Complex<T>) -> Result<Complex<T>> {
    let gamma = christoffel(model, masses, z)?;
    let vv = [v.re, v.im];
    let mut acc = [T::zero(); 2];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                acc[k] -= gamma[k][i][j] * vv[i] * vv[j];
            }
        }
    }
    Ok(Complex::new(acc[0], acc[1]))
}

/// Geodesic of `G(z)` from `z0` with initial chart velocity `dz0`, by RK4 with parameter step `h`.
pub fn shape_geodesic<T: Real>(
    model: &ConformalModel<T>,
    masses: &[T],
    z0: ShapePoint<T>,
    dz0: Complex<T>,
    steps: usize,
    h: T,
) -> Result<ShapePath<T>> {
    let mut z = z0.z;
    let mut v = dz0;
    let mut points = vec![z0];
    let mut params = vec![T::zero()];
    let mut tangents = vec![v];
    let two = T::of(2.0);
    for k in 1..=steps {
        let a1 = geodesic_rhs(model, masses, z, v)?;
        let (z2, v2) = (z + v * (h / two), v + a1 * (h / two));
        let a2 = geodesic_rhs(model, masses, z2, v2)?;
        let (z3, v3) = (z + v2 * (h / two), v + a2 * (h / two));
        let a3 = geodesic_rhs(model, masses, z3, v3)?;
        let (z4, v4) = (z + v3 * h, v + a3 * h);
        let a4 = geodesic_rhs(model, masses, z4, v4)?;
        z += (v + v2 * two + v3 * two + v4) * (h / T::of(6.0));
        v += (a1 + a2 * two + a3 * two + a4) * (h / T::of(6.0));
        points.push(ShapePoint::new(z.re, z.im).map_err(|_| degenerate(format!("geodesic left the chart at step {k}")))?);
        params.push(T::of(k as f64) * h);
        tangents.push(v);
    }
    Ok(ShapePath { points, params: Some(params), tangents: Some(tangents) })
}

/// `sqrt(dz^T G dz)`.
pub fn chart_speed<T: Real>(model: &ConformalModel<T>, masses: &[T], z: Complex<T>, dz: Complex<T>) -> Result<T> {
    let g = metric_at(model, masses, z)?;
    Ok((g[0][0] * dz.re * dz.re + T::of(2.0) * g[0][1] * dz.re * dz.im + g[1][1] * dz.im * dz.im).sqrt())
}

#[derive(Debug, Clone)]
pub struct JacobiPath<T> {
    pub path: ShapePath<T>,
    pub functional: T,
    pub iterations: usize,
    pub gradient_norm: T,
}

/// Shape potential entering the Jacobi weight `sqrt(E - V)`.
pub type ShapePotential<'a, T> = &'a dyn Fn(Complex<T>) -> T;

fn segment<T: Real>(
    model: &ConformalModel<T>,
    masses: &[T],
    potential: Option<ShapePotential<'_, T>>,
    e_const: T,
    a: Complex<T>,
    b: Complex<T>,
) -> Result<T> {
    let mid = (a + b) / T::of(2.0);
    let w = e_const - potential.map_or(T::zero(), |p| p(mid));
    if !(w > T::zero()) {
        return Err(invalid_param("e_const", "E - V must stay positive along the path"));
    }
    Ok(w.sqrt() * chart_speed(model, masses, mid, b - a)?)
}

/// Minimizes the discretized Jacobi functional `Σ sqrt(E - V) |Δq|_{g_B}` over
/// `n_knots` interior knots by preconditioned gradient descent with backtracking,
/// re-spacing the knots to equal weighted chord length every iteration.
pub fn jacobi_path_minimize<T: Real>(
    model: &ConformalModel<T>,
    masses: &[T],
    z0: ShapePoint<T>,
    z1: ShapePoint<T>,
    n_knots: usize,
    potential: Option<ShapePotential<'_, T>>,
    e_const: T,
) -> Result<JacobiPath<T>> {
    if !(e_const > T::zero()) {
        return Err(invalid_param("e_const", "must be positive"));
    }
    if z0 == z1 {
        return Ok(JacobiPath { path: ShapePath::from_points(vec![z0]), functional: T::zero(), iterations: 0, gradient_norm: T::zero() });
    }
    let k = n_knots + 1;
    let mut z: Vec<Complex<T>> = (0..=k).map(|i| z0.z + (z1.z - z0.z) * T::of(i as f64 / k as f64)).collect();
    let seg = |a: Complex<T>, b: Complex<T>| segment(model, masses, potential, e_const, a, b);
    let total = |z: &[Complex<T>]| -> Result<T> {
        let mut s = T::zero();
        for w in z.windows(2) {
            s += seg(w[0], w[1])?;
        }
        Ok(s)
    };
    let max_iter = 5000;
    let mut value = total(&z)?;
    let mut grad_norm = T::infinity();
    let mut quiet = 0;
    for iter in 0..max_iter {
        respace(&mut z, &seg)?;
        value = total(&z)?;
        let chord = (z1.z - z0.z).norm() / T::of(k as f64);
        let delta = T::of(1e-6) * chord;
        let mut g = vec![Complex::new(T::zero(), T::zero()); k + 1];
        let mut gn = T::zero();
        for i in 1..k {
            let local = |p: Complex<T>| -> Result<T> { Ok(seg(z[i - 1], p)? + seg(p, z[i + 1])?) };
            let gx = (local(z[i] + Complex::new(delta, T::zero()))? - local(z[i] - Complex::new(delta, T::zero()))?) / (T::of(2.0) * delta);
            let gy = (local(z[i] + Complex::new(T::zero(), delta))? - local(z[i] - Complex::new(T::zero(), delta))?) / (T::of(2.0) * delta);
            let mut gi = Complex::new(gx, gy);
            let t = z[i + 1] - z[i - 1];
            let t = t / t.norm();
            // Drop the reparametrization direction.
            gi = gi - t * (gi.re * t.re + gi.im * t.im);
            gn = gn.max(gi.norm());
            g[i] = gi;
        }
        grad_norm = gn;
        // Hessian of the length in the normal direction ~ (|G| / chord) * tridiag(-1, 2, -1).
        let gm = metric_at(model, masses, z[k / 2])?;
        let lam = ((gm[0][0] + gm[1][1]) / T::of(2.0)).sqrt() * e_const.sqrt();
        let rhs: Vec<Complex<T>> = g[1..k].iter().map(|&x| x * (chord / lam)).collect();
        let dir = solve_second_difference(&rhs);
        let mut alpha = T::one();
        let slope: T = g[1..k].iter().zip(&dir).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = z.clone();
            for i in 1..k {
                trial[i] = z[i] - dir[i - 1] * alpha;
            }
            if let Ok(v) = total(&trial) {
                if v <= value - T::of(1e-4) * alpha * slope {
                    let step = dir.iter().fold(T::zero(), |m, d| m.max(d.norm())) * alpha;
                    let rel = (value - v) / value;
                    z = trial;
                    value = v;
                    accepted = true;
                    quiet = if rel < T::of(1e-14) || step < T::of(1e-12) * chord { quiet + 1 } else { 0 };
                    break;
                }
            }
            alpha /= T::of(2.0);
        }
        if !accepted {
            quiet += 1;
        }
        if quiet >= 3 || gn < T::of(1e-12) * value {
            respace(&mut z, &seg)?;
            let value = total(&z)?;
            let points = z.iter().map(|c| ShapePoint::new(c.re, c.im)).collect::<Result<Vec<_>>>()?;
            return Ok(JacobiPath { path: ShapePath::from_points(points), functional: value, iterations: iter + 1, gradient_norm: gn });
        }
    }
    let _ = value;
    Err(Error::NonConvergence { iterations: max_iter, gradient_norm: grad_norm.as_f64() })
}

/// Moves the interior knots along the polyline to equal weighted chord length.
fn respace<T: Real>(z: &mut [Complex<T>], seg: &impl Fn(Complex<T>, Complex<T>) -> Result<T>) -> Result<()> {
    let k = z.len() - 1;
    let mut cum = vec![T::zero(); k + 1];
    for i in 0..k {
        cum[i + 1] = cum[i] + seg(z[i], z[i + 1])?;
    }
    let total = cum[k];
    let old = z.to_vec();
    let mut j = 0;
    for (i, zi) in z.iter_mut().enumerate().take(k).skip(1) {
        let target = total * T::of(i as f64 / k as f64);
        while j + 1 < k && cum[j + 1] < target {
            j += 1;
        }
        let w = (target - cum[j]) / (cum[j + 1] - cum[j]);
        *zi = old[j] * (T::one() - w) + old[j + 1] * w;
    }
    Ok(())
}

/// Solves `tridiag(-1, 2, -1) x = b` (Thomas algorithm), componentwise on complex entries.
fn solve_second_difference<T: Real>(b: &[Complex<T>]) -> Vec<Complex<T>> {
    let n = b.len();
    if n == 0 {
        return Vec::new();
    }
    let mut c = vec![T::zero(); n];
    let mut d = vec![Complex::new(T::zero(), T::zero()); n];
    let two = T::of(2.0);
    c[0] = -T::one() / two;
    d[0] = b[0] / two;
    for i in 1..n {
        let m = two + c[i - 1];
        c[i] = -T::one() / m;
        d[i] = (b[i] + d[i - 1]) / m;
    }
    let mut x = d.clone();
    for i in (0..n - 1).rev() {
        x[i] = d[i] - x[i + 1] * c[i];
    }
    x
}

fn run_back(
    model: &ConformalModel<f64>,
    cfg: &MassedConfiguration<f64>,
    v: &TangentVector<f64>,
    dt: f64,
    arclength: f64,
) -> Result<(MassedConfiguration<f64>, TangentVector<f64>)> {
    let mut s = 0.0;
    let mut q = cfg.clone();
    let mut v = v.clone();
    while s < arclength {
        let rec = integrate_newton_gauge(model, &q, &v, -dt, 1)?;
        if let Some(e) = rec.aborted {
            return Err(e);
        }
        s += 0.5 * dt * (rec.diagnostics[0].shape_speed + rec.diagnostics[1].shape_speed);
        q = rec.configs[1].clone();
        v = rec.velocities[1].clone();
    }
    Ok((q, v))
}

/// Outcome of comparing a projected Newton-gauge run with the shape geodesic.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GaugeEquivalence {
    pub max_chart_distance: f64,
    pub arclength: f64,
    pub drift: DriftReport,
    pub newton_steps: usize,
    pub geodesic_steps: usize,
    /// `(s, newton_re, newton_im, geodesic_re, geodesic_im)` at each geodesic sample.
    pub samples: Vec<[f64; 5]>,
}

/// Runs the Newton gauge from `cfg0` with seeded zero-energy horizontal data and
/// compares its Bookstein projection with the `g_B` geodesic through the
/// projected initial data over `arclength` units of shape arclength.
///
/// With `centered`, the seeded data at `cfg0` is first run backwards for half
/// the arclength, so the compared arc is centered on `cfg0`.
#[allow(clippy::too_many_arguments)]
pub fn gauge_equivalence_check(
    model: &ConformalModel<f64>,
    cfg0: &MassedConfiguration<f64>,
    seed: u64,
    dt: f64,
    steps: usize,
    arclength: f64,
    geodesic_step: f64,
    centered: bool,
) -> Result<GaugeEquivalence> {
    let mut v0 = sample_horizontal_initial(model, cfg0, seed)?;
    let mut start = cfg0.clone();
    if centered {
        (start, v0) = run_back(model, cfg0, &v0, dt, arclength / 2.0)?;
    }
    let cfg0 = &start;
    let traj = integrate_newton_gauge(model, cfg0, &v0, dt, steps)?;
    let drift = traj.drift();
    // Shape arclength along the run, to know how much of it to project.
    let mut s = 0.0;
    let mut cut = traj.len();
    for k in 1..traj.len() {
        s += 0.5 * dt * (traj.diagnostics[k].shape_speed + traj.diagnostics[k - 1].shape_speed);
        if s > arclength * 1.01 + 10.0 * dt {
            cut = k + 1;
            break;
        }
    }
    if s < arclength {
        return Err(invalid_param("arclength", format!("run covers only {s:.4} units of shape arclength")));
    }
    let head = TrajectoryRecord {
        times: traj.times[..cut].to_vec(),
        configs: traj.configs[..cut].to_vec(),
        velocities: traj.velocities[..cut].to_vec(),
        diagnostics: traj.diagnostics[..cut].to_vec(),
        aborted: None,
    };
    let newton = project_to_shape(&head)?;
    let masses = cfg0.masses();
    let s_newton = newton.arclengths(model, masses)?;

    let z0 = bookstein_shape(cfg0)?;
    let dz = bookstein_differential(cfg0, &v0.components)?;
    let speed = chart_speed(model, masses, z0.z, dz)?;
    let n_geo = (arclength / geodesic_step).ceil() as usize;
    let h = arclength / n_geo as f64;
    let geo = shape_geodesic(model, masses, z0, dz / speed, n_geo, h)?;

    let mut max_d: f64 = 0.0;
    let mut samples = Vec::with_capacity(n_geo + 1);
    for (k, p) in geo.points.iter().enumerate() {
        let sk = k as f64 * h;
        let zn = newton.at_arclength(&s_newton, sk);
        max_d = max_d.max((zn - p.z).norm());
        samples.push([sk, zn.re, zn.im, p.re(), p.im()]);
    }
    Ok(GaugeEquivalence { max_chart_distance: max_d, arclength, drift, newton_steps: traj.len() - 1, geodesic_steps: n_geo, samples })
}
