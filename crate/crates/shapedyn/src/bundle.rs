//! The bundle Q -> Q/G: vertical generators, horizontal projection, shape
//! metric and shape Jacobian, best matching, and the N = 3 Bookstein chart.

use num_complex::Complex;

use crate::error::{degenerate, Error, Result};
use crate::kinematics::*;
use crate::linalg::{symmetric_eigen, PivotedLdlt};
use crate::scalar::*;

/// Gram systems with an equilibrated condition estimate above this are rejected.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// The seven fundamental vector fields of the similarity group at a configuration,
/// ordered as translations x, y, z; rotations about the origin-fixed x, y, z axes; dilation.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalFrame<T> {
    pub generators: Vec<TangentVector<T>>,
}

pub fn vertical_generators<T: Real>(cfg: &MassedConfiguration<T>) -> VerticalFrame<T> {
    let n = cfg.len();
    let mut gens = vec![TangentVector::zeros(3 * n); 7];
    for a in 0..n {
        let q = cfg.position(a);
        for k in 0..3 {
            gens[k].components[3 * a + k] = T::one();
            let mut axis = [T::zero(); 3];
            axis[k] = T::one();
            let w = cross3(axis, q);
            gens[3 + k].components[3 * a..3 * a + 3].copy_from_slice(&w);
        }
        gens[6].components[3 * a..3 * a + 3].copy_from_slice(&q);
    }
    VerticalFrame { generators: gens }
}

fn gram_e<T: Real>(m: &[T], vecs: &[&[T]]) -> Vec<T> {
    let k = vecs.len();
    let mut g = vec![T::zero(); k * k];
    for i in 0..k {
        for j in i..k {
            let v = mass_inner_slices(m, vecs[i], vecs[j]);
            g[i * k + j] = v;
            g[j * k + i] = v;
        }
    }
    g
}

fn factor_vertical_gram<T: Real>(cfg: &MassedConfiguration<T>, frame: &VerticalFrame<T>) -> Result<PivotedLdlt<T>> {
    let refs: Vec<&[T]> = frame.generators.iter().map(|g| g.components.as_slice()).collect();
    let gram = gram_e(cfg.masses(), &refs);
    let fac = PivotedLdlt::new(&gram, 7)
        .map_err(|_| degenerate("vertical Gram matrix is singular (collinear or coincident configuration)"))?;
    let cond = fac.condition_estimate();
    if !(cond < T::of(MAX_GRAM_CONDITION)) {
        return Err(degenerate(format!("vertical Gram matrix condition estimate {cond:e} exceeds 1e12")));
    }
    Ok(fac)
}

/// Horizontal part of `u` with respect to `g_e` (and hence any conformal `g`).
pub(crate) fn horizontal_part<T: Real>(cfg: &MassedConfiguration<T>, u: &[T]) -> Result<Vec<T>> {
    let frame = vertical_generators(cfg);
    let fac = factor_vertical_gram(cfg, &frame)?;
    Ok(project_with(cfg, &frame, &fac, u))
}

fn project_with<T: Real>(cfg: &MassedConfiguration<T>, frame: &VerticalFrame<T>, fac: &PivotedLdlt<T>, u: &[T]) -> Vec<T> {
    let rhs: Vec<T> = frame.generators.iter().map(|w| mass_inner_slices(cfg.masses(), &w.components, u)).collect();
    let c = fac.solve(&rhs);
    let mut out = u.to_vec();
    for (ci, w) in c.iter().zip(&frame.generators) {
        for (o, &wi) in out.iter_mut().zip(&w.components) {
            *o -= *ci * wi;
        }
    }
    out
}

/// Projects `u` onto the g-orthogonal complement of the vertical space.
pub fn horizontal_project<T: Real>(
    model: &ConformalModel<T>,
    cfg: &MassedConfiguration<T>,
    u: &TangentVector<T>,
) -> Result<TangentVector<T>> {
    u.check_base(cfg)?;
    // g = f g_e, so orthogonality does not depend on f; evaluating it still
    // surfaces degenerate configurations for the chosen model.
    conformal_factor(model, cfg)?;
    Ok(TangentVector::new(horizontal_part(cfg, &u.components)?))
}

/// Several projections sharing one factorization.
pub fn horizontal_project_many<T: Real>(cfg: &MassedConfiguration<T>, us: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let frame = vertical_generators(cfg);
    let fac = factor_vertical_gram(cfg, &frame)?;
    Ok(us.iter().map(|u| project_with(cfg, &frame, &fac, u)).collect())
}

/// `sqrt(f) |u_⊥|_{g_e}`, the length of `u` in the shape metric.
pub fn shape_metric_norm<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>, u: &TangentVector<T>) -> Result<T> {
    let h = horizontal_project(model, cfg, u)?;
    let f = conformal_factor(model, cfg)?;
    Ok((f * mass_inner_slices(cfg.masses(), &h.components, &h.components)).sqrt())
}

/// Shape Jacobian `L f^{7/2} sqrt(det M)`.
pub fn shape_jacobian<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>) -> Result<T> {
    let (l2, det) = regular_invariants(cfg)?;
    let f = conformal_factor(model, cfg)?;
    Ok(l2.sqrt() * f.powf(T::of(3.5)) * det.sqrt())
}

/// Invariant shape Jacobian `L^4 f^{7/2} sqrt(det M) = L^3 𝔍`.
pub fn shape_jacobian_invariant<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>) -> Result<T> {
    let (l2, det) = regular_invariants(cfg)?;
    let f = conformal_factor(model, cfg)?;
    Ok(l2 * l2 * f.powf(T::of(3.5)) * det.sqrt())
}

/// Brute-force vertical volume density `sqrt|g_V|`, with the translation
/// generators normalized to be g_e-orthonormal. Rotations and dilation are
/// first projected g_e-orthogonally against the translations.
pub fn vertical_volume_density<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>) -> Result<T> {
    let frame = vertical_generators(cfg);
    let m = cfg.masses();
    let total = cfg.total_mass();
    let trans: Vec<Vec<T>> = (0..3)
        .map(|k| frame.generators[k].components.iter().map(|&x| x / total.sqrt()).collect())
        .collect();
    let mut rest: Vec<Vec<T>> = Vec::with_capacity(4);
    for w in &frame.generators[3..] {
        let mut v = w.components.clone();
        for t in &trans {
            let c = mass_inner_slices(m, t, &v);
            for (vi, &ti) in v.iter_mut().zip(t) {
                *vi -= c * ti;
            }
        }
        rest.push(v);
    }
    let refs: Vec<&[T]> = rest.iter().map(|v| v.as_slice()).collect();
    let g4 = gram_e(m, &refs);
    let det = PivotedLdlt::new(&g4, 4).map_err(|_| degenerate("rotation/dilation Gram matrix is singular"))?.determinant();
    if !(det > T::zero()) {
        return Err(degenerate("vertical volume vanishes"));
    }
    let f = conformal_factor(model, cfg)?;
    Ok(f.powf(T::of(3.5)) * det.sqrt())
}

/// Dimension of the vertical span from the eigenvalues of the normalized Gram matrix.
pub fn vertical_rank<T: Real>(cfg: &MassedConfiguration<T>) -> usize {
    let frame = vertical_generators(cfg);
    let refs: Vec<&[T]> = frame.generators.iter().map(|g| g.components.as_slice()).collect();
    let mut g = gram_e(cfg.masses(), &refs);
    let d: Vec<T> = (0..7).map(|i| g[i * 7 + i]).collect();
    for i in 0..7 {
        for j in 0..7 {
            let s = (d[i] * d[j]).sqrt();
            g[i * 7 + j] = if s > T::zero() { g[i * 7 + j] / s } else { T::zero() };
        }
    }
    let (vals, _) = symmetric_eigen(&g, 7);
    vals.iter().filter(|&&x| x > T::of(1e-10)).count()
}

/// Bookstein coordinate of a triangle: vertices 1 and 2 at -1 and +1, vertex 3 at `z`, `Im z > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapePoint<T> {
    pub z: Complex<T>,
}

impl<T: Real> ShapePoint<T> {
    pub fn new(re: T, im: T) -> Result<Self> {
        if !(im > T::zero()) || !re.is_finite() || !im.is_finite() {
            return Err(degenerate(format!("shape point ({re}, {im}) is not in the open upper half plane")));
        }
        Ok(Self { z: Complex::new(re, im) })
    }

    pub fn re(&self) -> T {
        self.z.re
    }

    pub fn im(&self) -> T {
        self.z.im
    }
}

fn require_triangle<T: Real>(cfg: &MassedConfiguration<T>) -> Result<()> {
    if cfg.len() != 3 {
        return Err(Error::InvalidConfiguration(format!("Bookstein chart needs exactly 3 particles, got {}", cfg.len())));
    }
    Ok(())
}

/// Bookstein coordinate of three points given as a flat slice, without regularity checks.
pub(crate) fn bookstein_raw<T: Real>(q: &[T]) -> Complex<T> {
    let p1 = [q[0], q[1], q[2]];
    let p2 = [q[3], q[4], q[5]];
    let p3 = [q[6], q[7], q[8]];
    let base = sub3(p2, p1);
    let half2 = dot3(base, base) / T::of(4.0);
    let mid = scale3(T::of(0.5), add3(p1, p2));
    let r = sub3(p3, mid);
    // Components of r along the base and perpendicular to it, in units of the half base.
    let along = dot3(r, base) / T::of(2.0);
    let perp = norm3(cross3(base, r)) / T::of(2.0);
    Complex::new(along / half2, perp / half2)
}

pub fn bookstein_shape<T: Real>(cfg: &MassedConfiguration<T>) -> Result<ShapePoint<T>> {
    require_triangle(cfg)?;
    regular_invariants(cfg)?;
    let z = bookstein_raw(cfg.coords());
    ShapePoint::new(z.re, z.im)
}

/// The configuration `(-1,0,0), (1,0,0), (Re z, Im z, 0)` representing `z`.
pub fn bookstein_representative<T: Real>(z: Complex<T>, masses: &[T]) -> Result<MassedConfiguration<T>> {
    let (o, zero) = (T::one(), T::zero());
    MassedConfiguration::new(&[[-o, zero, zero], [o, zero, zero], [z.re, z.im, zero]], masses)
}

/// Chart differential `dz(u)` by central differences of the Bookstein map.
pub fn bookstein_differential<T: Real>(cfg: &MassedConfiguration<T>, u: &[T]) -> Result<Complex<T>> {
    require_triangle(cfg)?;
    let l = scale_moment(cfg).sqrt();
    let un = mass_inner_slices(&[T::one(); 3], u, u).sqrt();
    if un == T::zero() {
        return Ok(Complex::new(T::zero(), T::zero()));
    }
    let eps = T::of(1e-5) * l / un;
    let zp = bookstein_raw(cfg.displaced(u, eps).coords());
    let zm = bookstein_raw(cfg.displaced(u, -eps).coords());
    Ok((zp - zm) / (T::of(2.0) * eps))
}

fn metric_from_lifts<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>, h: &[Vec<T>; 2]) -> Result<[[T; 2]; 2]> {
    let f = conformal_factor(model, cfg)?;
    let m = cfg.masses();
    let g11 = f * mass_inner_slices(m, &h[0], &h[0]);
    let g12 = f * mass_inner_slices(m, &h[0], &h[1]);
    let g22 = f * mass_inner_slices(m, &h[1], &h[1]);
    Ok([[g11, g12], [g12, g22]])
}

/// Horizontal lifts of the two Bookstein coordinate directions at an arbitrary
/// fiber representative `cfg`.
pub fn bookstein_horizontal_lifts<T: Real>(cfg: &MassedConfiguration<T>) -> Result<[Vec<T>; 2]> {
    require_triangle(cfg)?;
    let basis: Vec<Vec<T>> = (0..9)
        .map(|k| {
            let mut e = vec![T::zero(); 9];
            e[k] = T::one();
            e
        })
        .collect();
    let hs = horizontal_project_many(cfg, &basis)?;
    // A maps coefficient vectors over the projected basis to chart velocities.
    let mut a = [[T::zero(); 9]; 2];
    for (k, h) in hs.iter().enumerate() {
        let dz = bookstein_differential(cfg, h)?;
        a[0][k] = dz.re;
        a[1][k] = dz.im;
    }
    let mut aat = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            aat[i][j] = (0..9).map(|k| a[i][k] * a[j][k]).sum();
        }
    }
    let det = aat[0][0] * aat[1][1] - aat[0][1] * aat[1][0];
    if !(det.abs() > T::epsilon() * aat[0][0] * aat[1][1]) {
        return Err(degenerate("Bookstein chart differential is singular"));
    }
    let inv = [[aat[1][1] / det, -aat[0][1] / det], [-aat[1][0] / det, aat[0][0] / det]];
    let mut lifts = [vec![T::zero(); 9], vec![T::zero(); 9]];
    for (i, lift) in lifts.iter_mut().enumerate() {
        let coef: Vec<T> = (0..9).map(|k| a[0][k] * inv[0][i] + a[1][k] * inv[1][i]).collect();
        for (k, h) in hs.iter().enumerate() {
            for (l, &hv) in lift.iter_mut().zip(h) {
                *l += coef[k] * hv;
            }
        }
    }
    Ok(lifts)
}

/// Pull-back of the shape metric to the Bookstein chart at an arbitrary fiber representative.
pub fn pullback_shape_metric_at<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>) -> Result<[[T; 2]; 2]> {
    let lifts = bookstein_horizontal_lifts(cfg)?;
    metric_from_lifts(model, cfg, &lifts)
}

/// Pull-back of the shape metric `G(z)` to the Bookstein chart.
///
/// Uses the representative `(-1,0,0), (1,0,0), (x,y,0)`; the chart inverse is
/// affine there, so its central differences are exact.
pub fn pullback_shape_metric<T: Real>(model: &ConformalModel<T>, z: ShapePoint<T>, masses: &[T]) -> Result<[[T; 2]; 2]> {
    let cfg = bookstein_representative(z.z, masses)?;
    regular_invariants(&cfg)?;
    let h = T::of(1e-3) * (T::one() + z.z.norm());
    let mut dirs = [vec![T::zero(); 9], vec![T::zero(); 9]];
    for (i, dir) in dirs.iter_mut().enumerate() {
        let dz = if i == 0 { Complex::new(h, T::zero()) } else { Complex::new(T::zero(), h) };
        let plus = bookstein_representative(z.z + dz, masses)?;
        let minus = bookstein_representative(z.z - dz, masses)?;
        for k in 0..9 {
            dir[k] = (plus.coords()[k] - minus.coords()[k]) / (T::of(2.0) * h);
        }
    }
    let lifts = horizontal_project_many(&cfg, &dirs)?;
    metric_from_lifts(model, &cfg, &[lifts[0].clone(), lifts[1].clone()])
}

/// Optimal similarity `t` minimizing `|A - t(B)|_{g_e}` and the attained distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment<T> {
    pub transform: SimilarityTransform<T>,
    pub residual: T,
}

pub fn procrustes_align<T: Real>(a: &MassedConfiguration<T>, b: &MassedConfiguration<T>) -> Result<Alignment<T>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    if a.masses().iter().zip(b.masses()).any(|(x, y)| (*x - *y).abs() > T::epsilon() * x.abs() * T::of(16.0)) {
        return Err(Error::InvalidConfiguration("Procrustes alignment needs identical masses".into()));
    }
    let m = a.masses();
    let ca = center_of_mass(a);
    let cb = center_of_mass(b);
    let mut s = [[T::zero(); 3]; 3];
    let mut bb = T::zero();
    for (i, &mi) in m.iter().enumerate() {
        let x = sub3(a.position(i), ca);
        let y = sub3(b.position(i), cb);
        bb += mi * dot3(y, y);
        for r in 0..3 {
            for c in 0..3 {
                s[r][c] += mi * y[r] * x[c];
            }
        }
    }
    if !(bb > T::of(EPS_SCALE)) {
        return Err(degenerate("cannot align a coincident configuration"));
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
    let nmat = [
        sxx + syy + szz,
        syz - szy,
        szx - sxz,
        sxy - syx,
        syz - szy,
        sxx - syy - szz,
        sxy + syx,
        szx + sxz,
        szx - sxz,
        sxy + syx,
        -sxx + syy - szz,
        syz + szy,
        sxy - syx,
        szx + sxz,
        syz + szy,
        -sxx - syy + szz,
    ];
    let (vals, vecs) = symmetric_eigen(&nmat, 4);
    if vals[3] - vals[2] <= T::of(1e-12) * vals[3].abs().max(T::one()) && vals[3] > T::zero() {
        // A degenerate top eigenvalue means the rotation is not unique (planar-collinear data).
        let (l2a, _) = (scale_moment(a), ());
        if !(mat3_det(&inertia_tensor(a)) > T::of(EPS_COLLINEAR) * l2a * l2a * l2a) {
            return Err(degenerate("optimal rotation is not unique for collinear data"));
        }
    }
    let q = [vecs[3], vecs[7], vecs[11], vecs[15]];
    let rot = quaternion_to_matrix(q);
    let mut cross = T::zero();
    for (i, &mi) in m.iter().enumerate() {
        let x = sub3(a.position(i), ca);
        let y = mat3_vec(&rot, sub3(b.position(i), cb));
        cross += mi * dot3(x, y);
    }
    let scale = cross / bb;
    if !(scale > T::zero()) {
        return Err(degenerate("best-matching scale is not positive"));
    }
    let translation = sub3(ca, scale3(scale, mat3_vec(&rot, cb)));
    let transform = SimilarityTransform { rotation: rot, translation, scale };
    let moved = apply_similarity(b, &transform);
    let mut r2 = T::zero();
    for i in 0..a.len() {
        let d = sub3(a.position(i), moved.position(i));
        r2 += m[i] * dot3(d, d);
    }
    Ok(Alignment { transform, residual: r2.max(T::zero()).sqrt() })
}
