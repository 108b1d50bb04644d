//! Absolute configuration space: configurations, similarity transforms,
//! the mass-weighted metric and the conformal factors built on it.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, Error, Result};
use crate::scalar::*;

/// Relative threshold on `det M / L^6` below which a configuration is collinear.
pub const EPS_COLLINEAR: f64 = 1e-10;
/// Absolute threshold on `L^2` below which all particles coincide.
pub const EPS_SCALE: f64 = 1e-12;
/// Relative threshold on `r^2 / L^2` below which a pair counts as coincident.
pub const EPS_PAIR: f64 = 1e-14;

/// N labelled particles with positive masses, stored as a flat `3N` coordinate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MassedConfiguration<T> {
    coords: Vec<T>,
    masses: Vec<T>,
}

impl<T: Real> MassedConfiguration<T> {
    pub fn new(positions: &[Vec3<T>], masses: &[T]) -> Result<Self> {
        let coords: Vec<T> = positions.iter().flat_map(|p| p.iter().copied()).collect();
        Self::from_flat(coords, masses.to_vec())
    }

    pub fn with_unit_masses(positions: &[Vec3<T>]) -> Result<Self> {
        Self::new(positions, &vec![T::one(); positions.len()])
    }

    pub fn from_flat(coords: Vec<T>, masses: Vec<T>) -> Result<Self> {
        if masses.len() < 3 {
            return Err(Error::InvalidConfiguration(format!("need at least 3 particles, got {}", masses.len())));
        }
        if coords.len() != 3 * masses.len() {
            return Err(Error::DimensionMismatch { expected: 3 * masses.len(), got: coords.len() });
        }
        if let Some(m) = masses.iter().find(|m| !(**m > T::zero()) || !m.is_finite()) {
            return Err(Error::InvalidConfiguration(format!("mass {m} is not strictly positive")));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfiguration("non-finite coordinate".into()));
        }
        Ok(Self { coords, masses })
    }

    /// Number of particles N.
    #[inline]
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Dimension `n = 3N` of configuration space.
    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    /// Raw coordinate access for in-place perturbation (finite differences, integrators).
    #[inline]
    pub fn coords_mut(&mut self) -> &mut [T] {
        &mut self.coords
    }

    #[inline]
    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    #[inline]
    pub fn position(&self, a: usize) -> Vec3<T> {
        [self.coords[3 * a], self.coords[3 * a + 1], self.coords[3 * a + 2]]
    }

    pub fn positions(&self) -> Vec<Vec3<T>> {
        (0..self.len()).map(|a| self.position(a)).collect()
    }

    /// Mass of the particle owning flat coordinate `i`.
    #[inline]
    pub fn coord_mass(&self, i: usize) -> T {
        self.masses[i / 3]
    }

    pub fn total_mass(&self) -> T {
        self.masses.iter().copied().sum()
    }

    /// Returns a copy displaced by `eps * u`.
    pub fn displaced(&self, u: &[T], eps: T) -> Self {
        let mut out = self.clone();
        for (x, &du) in out.coords.iter_mut().zip(u) {
            *x += eps * du;
        }
        out
    }

    /// Selects a sub-configuration. The result may have fewer than three particles,
    /// so it is returned as raw slices.
    pub fn select(&self, indices: &[usize]) -> (Vec<T>, Vec<T>) {
        let mut q = Vec::with_capacity(3 * indices.len());
        let mut m = Vec::with_capacity(indices.len());
        for &a in indices {
            q.extend_from_slice(&self.coords[3 * a..3 * a + 3]);
            m.push(self.masses[a]);
        }
        (q, m)
    }

    pub fn cast<U: Real>(&self) -> MassedConfiguration<U> {
        MassedConfiguration {
            coords: self.coords.iter().map(|x| U::of(x.as_f64())).collect(),
            masses: self.masses.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }
}

/// A tangent vector at some configuration, as `3N` velocity components.
///
/// The base point is not stored; operations taking a configuration and a
/// tangent vector check that the dimensions agree.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<T> {
    pub components: Vec<T>,
}

impl<T: Real> TangentVector<T> {
    pub fn new(components: Vec<T>) -> Self {
        Self { components }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { components: vec![T::zero(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn check_base(&self, cfg: &MassedConfiguration<T>) -> Result<()> {
        if self.dim() != cfg.dim() {
            return Err(Error::DimensionMismatch { expected: cfg.dim(), got: self.dim() });
        }
        Ok(())
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { components: self.components.iter().map(|&x| s * x).collect() }
    }

    pub fn particle(&self, a: usize) -> Vec3<T> {
        [self.components[3 * a], self.components[3 * a + 1], self.components[3 * a + 2]]
    }
}

/// `q -> scale * rotation * q + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub scale: T,
}

impl<T: Real> SimilarityTransform<T> {
    pub fn identity() -> Self {
        Self { rotation: mat3_identity(), translation: [T::zero(); 3], scale: T::one() }
    }

    pub fn new(rotation: Mat3<T>, translation: Vec3<T>, scale: T) -> Result<Self> {
        if !(scale > T::zero()) {
            return Err(Error::InvalidConfiguration(format!("similarity scale {scale} must be positive")));
        }
        let rtr = mat3_mul(&mat3_transpose(&rotation), &rotation);
        let id: Mat3<T> = mat3_identity();
        let mut dev = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                dev = dev.max((rtr[i][j] - id[i][j]).abs());
            }
        }
        let tol = T::of(1e-12).max(T::epsilon() * T::of(64.0));
        if dev > tol || mat3_det(&rotation) < T::zero() {
            return Err(Error::InvalidConfiguration("rotation matrix is not in SO(3)".into()));
        }
        Ok(Self { rotation, translation, scale })
    }

    /// Builds the transform from a quaternion, which is normalized first.
    pub fn from_quaternion(q: [T; 4], translation: Vec3<T>, scale: T) -> Self {
        Self { rotation: quaternion_to_matrix(q), translation, scale }
    }

    pub fn apply_point(&self, p: Vec3<T>) -> Vec3<T> {
        add3(scale3(self.scale, mat3_vec(&self.rotation, p)), self.translation)
    }

    /// Tangent pushforward `u -> scale * rotation * u`.
    pub fn push_vector(&self, u: &TangentVector<T>) -> TangentVector<T> {
        let mut out = u.clone();
        for a in 0..u.dim() / 3 {
            let v = scale3(self.scale, mat3_vec(&self.rotation, u.particle(a)));
            out.components[3 * a..3 * a + 3].copy_from_slice(&v);
        }
        out
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: mat3_mul(&self.rotation, &other.rotation),
            translation: add3(scale3(self.scale, mat3_vec(&self.rotation, other.translation)), self.translation),
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = mat3_transpose(&self.rotation);
        let inv_scale = T::one() / self.scale;
        Self { rotation: rt, translation: scale3(-inv_scale, mat3_vec(&rt, self.translation)), scale: inv_scale }
    }
}

pub fn apply_similarity<T: Real>(cfg: &MassedConfiguration<T>, t: &SimilarityTransform<T>) -> MassedConfiguration<T> {
    let mut out = cfg.clone();
    for a in 0..cfg.len() {
        let p = t.apply_point(cfg.position(a));
        out.coords[3 * a..3 * a + 3].copy_from_slice(&p);
    }
    out
}

/// Centre of mass of flat coordinates `q` with masses `m` (any N ≥ 1).
pub fn center_of_mass_of<T: Real>(q: &[T], m: &[T]) -> Vec3<T> {
    let mut c = [T::zero(); 3];
    let mut total = T::zero();
    for (a, &ma) in m.iter().enumerate() {
        for k in 0..3 {
            c[k] += ma * q[3 * a + k];
        }
        total += ma;
    }
    scale3(T::one() / total, c)
}

/// `L^2 = Σ m_α |q_α - q_cm|^2`.
pub fn scale_moment_of<T: Real>(q: &[T], m: &[T]) -> T {
    let c = center_of_mass_of(q, m);
    let mut s = T::zero();
    for (a, &ma) in m.iter().enumerate() {
        let d = sub3([q[3 * a], q[3 * a + 1], q[3 * a + 2]], c);
        s += ma * dot3(d, d);
    }
    s
}

/// `L^2` from pair separations, `(Σ m)^{-1} Σ_{α<β} m_α m_β |q_α - q_β|^2`.
pub fn scale_moment_pairs_of<T: Real>(q: &[T], m: &[T]) -> T {
    let mut s = T::zero();
    for a in 0..m.len() {
        for b in a + 1..m.len() {
            let d = sub3([q[3 * a], q[3 * a + 1], q[3 * a + 2]], [q[3 * b], q[3 * b + 1], q[3 * b + 2]]);
            s += m[a] * m[b] * dot3(d, d);
        }
    }
    s / m.iter().copied().sum()
}

/// Inertia tensor about the centre of mass.
pub fn inertia_tensor_of<T: Real>(q: &[T], m: &[T]) -> Mat3<T> {
    let c = center_of_mass_of(q, m);
    let mut t = [[T::zero(); 3]; 3];
    for (a, &ma) in m.iter().enumerate() {
        let r = sub3([q[3 * a], q[3 * a + 1], q[3 * a + 2]], c);
        let r2 = dot3(r, r);
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { r2 } else { T::zero() };
                t[i][j] += ma * (delta - r[i] * r[j]);
            }
        }
    }
    t
}

pub fn center_of_mass<T: Real>(cfg: &MassedConfiguration<T>) -> Vec3<T> {
    center_of_mass_of(cfg.coords(), cfg.masses())
}

pub fn scale_moment<T: Real>(cfg: &MassedConfiguration<T>) -> T {
    scale_moment_of(cfg.coords(), cfg.masses())
}

pub fn inertia_tensor<T: Real>(cfg: &MassedConfiguration<T>) -> Mat3<T> {
    inertia_tensor_of(cfg.coords(), cfg.masses())
}

/// `L^2` and `det M`, checked against the degeneracy thresholds.
pub fn regular_invariants<T: Real>(cfg: &MassedConfiguration<T>) -> Result<(T, T)> {
    let l2 = scale_moment(cfg);
    if !(l2 > T::of(EPS_SCALE)) {
        return Err(degenerate(format!("coincident configuration, L^2 = {l2}")));
    }
    let det = mat3_det(&inertia_tensor(cfg));
    if !(det > T::of(EPS_COLLINEAR) * l2 * l2 * l2) {
        return Err(degenerate(format!("collinear configuration, det M / L^6 = {}", det / (l2 * l2 * l2))));
    }
    Ok((l2, det))
}

pub type FactorFn<T> = Arc<dyn Fn(&MassedConfiguration<T>) -> T + Send + Sync>;

/// Conformal factor `f` of the invariant metric `g = f g_e`.
#[derive(Clone)]
pub enum ConformalModel<T> {
    /// `f_a = (Σ_{α<β} m_α m_β / r_αβ)^2`
    BB,
    /// `f_b = L^{-2}`
    InverseL2,
    /// `f_c = L^{-8/7} (det M)^{-1/7}`
    Canonical,
    /// `f_d = Σ_{α<β} m_α m_β / r_αβ^2`
    InverseSquarePairs,
    /// `f_g = L^{-1} Σ_{α<β} m_α m_β / r_αβ`
    GravityLike,
    /// A homogeneous factor supplied by the caller, verified by [`ConformalModel::user_supplied`].
    UserSupplied(FactorFn<T>),
    /// Constant factor. Not homogeneous: only meaningful for flat toy models.
    Constant(T),
    /// Arbitrary positive factor for toy models; no homogeneity requirement.
    Toy(FactorFn<T>),
}

impl<T: Real> fmt::Debug for ConformalModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UserSupplied(_) => f.write_str("UserSupplied"),
            Self::Toy(_) => f.write_str("Toy"),
            Self::Constant(c) => write!(f, "Constant({c})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Serializable names of the built-in factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    BB,
    InverseL2,
    Canonical,
    InverseSquarePairs,
    GravityLike,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::BB, ModelKind::InverseL2, ModelKind::Canonical, ModelKind::InverseSquarePairs, ModelKind::GravityLike];

    pub fn model<T: Real>(self) -> ConformalModel<T> {
        match self {
            ModelKind::BB => ConformalModel::BB,
            ModelKind::InverseL2 => ConformalModel::InverseL2,
            ModelKind::Canonical => ConformalModel::Canonical,
            ModelKind::InverseSquarePairs => ConformalModel::InverseSquarePairs,
            ModelKind::GravityLike => ConformalModel::GravityLike,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        let key: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "bb" | "fa" => Some(Self::BB),
            "inversel2" | "fb" => Some(Self::InverseL2),
            "canonical" | "fc" => Some(Self::Canonical),
            "inversesquarepairs" | "fd" => Some(Self::InverseSquarePairs),
            "gravitylike" | "fg" => Some(Self::GravityLike),
            _ => None,
        }
    }
}

impl<T: Real> ConformalModel<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::BB => "BB",
            Self::InverseL2 => "InverseL2",
            Self::Canonical => "Canonical",
            Self::InverseSquarePairs => "InverseSquarePairs",
            Self::GravityLike => "GravityLike",
            Self::UserSupplied(_) => "UserSupplied",
            Self::Constant(_) => "Constant",
            Self::Toy(_) => "Toy",
        }
    }

    /// Whether `f(λ t q) = λ^{-2} f(q)` holds, i.e. whether `g = f g_e` is similarity invariant.
    pub fn is_homogeneous(&self) -> bool {
        !matches!(self, Self::Constant(_) | Self::Toy(_))
    }

    /// Wraps a caller-supplied factor after checking positivity and degree −2
    /// homogeneity at `probe` under three scalings and a rigid motion.
    pub fn user_supplied(f: FactorFn<T>, probe: &MassedConfiguration<T>) -> Result<Self> {
        let f0 = f(probe);
        if !(f0 > T::zero()) || !f0.is_finite() {
            return Err(Error::NotHomogeneous(f64::INFINITY));
        }
        let mut worst = T::zero();
        for (k, lambda) in [0.5, 2.0, 3.7].into_iter().enumerate() {
            let lambda = T::of(lambda);
            let q = [T::of(0.3 + k as f64), T::of(-0.7), T::of(0.2), T::of(0.9)];
            let t = SimilarityTransform::from_quaternion(q, [T::of(1.5), T::of(-2.0), T::of(0.25 * k as f64)], lambda);
            let ft = f(&apply_similarity(probe, &t));
            let rel = (ft * lambda * lambda - f0).abs() / f0;
            worst = worst.max(rel);
        }
        if !(worst < T::of(1e-8)) {
            return Err(Error::NotHomogeneous(worst.as_f64()));
        }
        Ok(Self::UserSupplied(f))
    }
}

fn inverse_pair_sums<T: Real>(cfg: &MassedConfiguration<T>, l2: T) -> Result<(T, T)> {
    let n = cfg.len();
    let m = cfg.masses();
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    for a in 0..n {
        for b in a + 1..n {
            let d = sub3(cfg.position(a), cfg.position(b));
            let r2 = dot3(d, d);
            if !(r2 > T::of(EPS_PAIR) * l2) {
                return Err(degenerate(format!("particles {a} and {b} coincide")));
            }
            let mm = m[a] * m[b];
            s1 += mm / r2.sqrt();
            s2 += mm / r2;
        }
    }
    Ok((s1, s2))
}

/// Evaluates the conformal factor.
pub fn conformal_factor<T: Real>(model: &ConformalModel<T>, cfg: &MassedConfiguration<T>) -> Result<T> {
    let value = match model {
        ConformalModel::Constant(c) => return Ok(*c),
        ConformalModel::Toy(f) | ConformalModel::UserSupplied(f) => f(cfg),
        ConformalModel::Canonical => {
            let (l2, det) = regular_invariants(cfg)?;
            (l2.powi(4) * det).powf(-T::one() / T::of(7.0))
        }
        _ => {
            let l2 = scale_moment(cfg);
            if !(l2 > T::of(EPS_SCALE)) {
                return Err(degenerate(format!("coincident configuration, L^2 = {l2}")));
            }
            match model {
                ConformalModel::InverseL2 => T::one() / l2,
                ConformalModel::BB => {
                    let (s1, _) = inverse_pair_sums(cfg, l2)?;
                    s1 * s1
                }
                ConformalModel::InverseSquarePairs => inverse_pair_sums(cfg, l2)?.1,
                ConformalModel::GravityLike => inverse_pair_sums(cfg, l2)?.0 / l2.sqrt(),
                _ => unreachable!(),
            }
        }
    };
    if !(value > T::zero()) || !value.is_finite() {
        return Err(degenerate(format!("conformal factor {} is not positive and finite", value)));
    }
    Ok(value)
}

/// `g_e(u, v) = Σ m_α u_α · v_α`.
pub fn mass_metric_inner<T: Real>(cfg: &MassedConfiguration<T>, u: &TangentVector<T>, v: &TangentVector<T>) -> Result<T> {
    u.check_base(cfg)?;
    v.check_base(cfg)?;
    Ok(mass_inner_slices(cfg.masses(), &u.components, &v.components))
}

pub(crate) fn mass_inner_slices<T: Real>(m: &[T], u: &[T], v: &[T]) -> T {
    let mut s = T::zero();
    for i in 0..u.len() {
        s += m[i / 3] * u[i] * v[i];
    }
    s
}

/// `g(u, v) = f(q) g_e(u, v)`.
pub fn invariant_metric_inner<T: Real>(
    model: &ConformalModel<T>,
    cfg: &MassedConfiguration<T>,
    u: &TangentVector<T>,
    v: &TangentVector<T>,
) -> Result<T> {
    Ok(conformal_factor(model, cfg)? * mass_metric_inner(cfg, u, v)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equilateral() -> MassedConfiguration<f64> {
        let s = 3f64.sqrt() / 2.0;
        MassedConfiguration::with_unit_masses(&[[1.0, 0.0, 0.0], [-0.5, s, 0.0], [-0.5, -s, 0.0]]).unwrap()
    }

    #[test]
    fn two_body_center_of_mass() {
        assert_eq!(center_of_mass_of(&[0.0, 0.0, 0.0, 2.0, 0.0, 0.0], &[1.0, 1.0]), [1.0, 0.0, 0.0]);
        assert_eq!(center_of_mass_of(&[0.0, 0.0, 0.0, 3.0, 0.0, 0.0], &[1.0, 2.0]), [2.0, 0.0, 0.0]);
    }

    #[test]
    fn two_body_scale_moment_and_inertia() {
        let q = [1.0, 0.0, 0.0, -1.0, 0.0, 0.0];
        let m = [1.0, 1.0];
        assert_eq!(scale_moment_of(&q, &m), 2.0);
        assert_eq!(scale_moment_pairs_of(&q, &m), 2.0);
        let t = inertia_tensor_of(&q, &m);
        assert_eq!(t, [[0.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]);
        assert_eq!(mat3_det(&t), 0.0);
    }

    #[test]
    fn equilateral_invariants() {
        let cfg = equilateral();
        assert!((scale_moment(&cfg) - 3.0).abs() < 1e-14);
        let t = inertia_tensor(&cfg);
        let expect = [[1.5, 0.0, 0.0], [0.0, 1.5, 0.0], [0.0, 0.0, 3.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((t[i][j] - expect[i][j]).abs() < 1e-14);
            }
        }
        assert!((mat3_det(&t) - 27.0 / 4.0).abs() < 1e-13);
        let fb = conformal_factor(&ConformalModel::InverseL2, &cfg).unwrap();
        assert!((fb - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bb_factor_of_pair_sum() {
        // Three particles: the pair sum is hand-evaluated.
        let cfg = MassedConfiguration::with_unit_masses(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 4.0, 0.0]]).unwrap();
        let s1 = 0.5 + 0.25 + 1.0 / 20f64.sqrt();
        let f = conformal_factor(&ConformalModel::BB, &cfg).unwrap();
        assert!((f - s1 * s1).abs() < 1e-14);
    }

    #[test]
    fn mass_metric_single_particle() {
        let cfg = MassedConfiguration::new(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], &[2.0, 1.0, 1.0]).unwrap();
        let mut u = TangentVector::zeros(9);
        u.components[0] = 1.0;
        assert_eq!(mass_metric_inner(&cfg, &u, &u).unwrap(), 2.0);
        let mut v = TangentVector::zeros(9);
        v.components[4] = 1.0;
        assert_eq!(mass_metric_inner(&cfg, &u, &v).unwrap(), 0.0);
        assert!(mass_metric_inner(&cfg, &u, &TangentVector::zeros(6)).is_err());
    }

    #[test]
    fn rejects_small_or_invalid_systems() {
        assert!(MassedConfiguration::<f64>::with_unit_masses(&[[0.0; 3], [1.0, 0.0, 0.0]]).is_err());
        assert!(MassedConfiguration::new(&[[0.0; 3]; 3], &[1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn canonical_rejects_collinear() {
        let cfg = MassedConfiguration::with_unit_masses(&[[0.0; 3], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            conformal_factor(&ConformalModel::Canonical, &cfg),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn user_supplied_self_test() {
        let cfg = equilateral();
        let good: FactorFn<f64> = Arc::new(|c: &MassedConfiguration<f64>| 2.0 / scale_moment(c));
        assert!(ConformalModel::user_supplied(good, &cfg).is_ok());
        let bad: FactorFn<f64> = Arc::new(|c: &MassedConfiguration<f64>| 1.0 / scale_moment(c).sqrt());
        assert!(matches!(ConformalModel::user_supplied(bad, &cfg), Err(Error::NotHomogeneous(_))));
    }

    #[test]
    fn similarity_group_laws() {
        let a = SimilarityTransform::from_quaternion([0.2, 0.5, -0.3, 0.8], [1.0, 2.0, 3.0], 1.7);
        let b = SimilarityTransform::from_quaternion([0.9, -0.1, 0.4, 0.2], [-0.5, 0.0, 0.25], 0.6);
        let cfg = equilateral();
        let lhs = apply_similarity(&apply_similarity(&cfg, &b), &a);
        let rhs = apply_similarity(&cfg, &a.compose(&b));
        let back = apply_similarity(&rhs, &a.compose(&b).inverse());
        for i in 0..9 {
            assert!((lhs.coords()[i] - rhs.coords()[i]).abs() < 1e-13);
            assert!((back.coords()[i] - cfg.coords()[i]).abs() < 1e-13);
        }
        assert_eq!(apply_similarity(&cfg, &SimilarityTransform::identity()), cfg);
        assert!(SimilarityTransform::new(a.rotation, a.translation, a.scale).is_ok());
        let mut reflect = mat3_identity::<f64>();
        reflect[2][2] = -1.0;
        assert!(SimilarityTransform::new(reflect, [0.0; 3], 1.0).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let cfg: MassedConfiguration<f32> = equilateral().cast();
        let f = conformal_factor(&ConformalModel::Canonical, &cfg).unwrap();
        let f64v = conformal_factor(&ConformalModel::Canonical, &equilateral()).unwrap();
        assert!(((f as f64) - f64v).abs() < 1e-5 * f64v);
    }
}
