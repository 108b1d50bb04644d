//! Central finite differences on configuration space.

use num_complex::Complex;

use crate::error::{invalid_param, Result};
use crate::kinematics::{scale_moment, MassedConfiguration};
use crate::scalar::Real;

/// Finite-difference settings. `h` is relative to the configuration scale `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdScheme<T> {
    pub h: T,
    pub order: u8,
    pub richardson: bool,
}

impl<T: Real> Default for FdScheme<T> {
    fn default() -> Self {
        Self { h: T::of(1e-3), order: 2, richardson: false }
    }
}

impl<T: Real> FdScheme<T> {
    pub fn new(h: T, order: u8, richardson: bool) -> Result<Self> {
        if !(h > T::zero()) {
            return Err(invalid_param("h", "step must be positive"));
        }
        if order != 2 && order != 4 {
            return Err(invalid_param("order", format!("unsupported order {order}, expected 2 or 4")));
        }
        Ok(Self { h, order, richardson })
    }

    pub fn with_h(self, h: T) -> Self {
        Self { h, ..self }
    }

    pub fn halved(self) -> Self {
        Self { h: self.h / T::of(2.0), ..self }
    }

    /// Absolute step at `cfg`.
    pub fn step(&self, cfg: &MassedConfiguration<T>) -> T {
        self.h * scale_moment(cfg).sqrt()
    }
}

/// Values a finite-difference stencil can combine.
pub trait FdValue<T: Real>: Copy + std::ops::Add<Output = Self> + std::ops::Sub<Output = Self> {
    fn scale(self, s: T) -> Self;
}

impl<T: Real> FdValue<T> for T {
    #[inline]
    fn scale(self, s: T) -> Self {
        self * s
    }
}

impl<T: Real> FdValue<T> for Complex<T> {
    #[inline]
    fn scale(self, s: T) -> Self {
        self * s
    }
}

/// Partial derivative along flat coordinate `i` with absolute step `h`.
pub fn partial<T: Real, V: FdValue<T>>(
    f: &mut impl FnMut(&MassedConfiguration<T>) -> Result<V>,
    cfg: &MassedConfiguration<T>,
    i: usize,
    h: T,
    order: u8,
) -> Result<V> {
    let mut work = cfg.clone();
    let x0 = cfg.coords()[i];
    let mut at = |dx: T, work: &mut MassedConfiguration<T>| -> Result<V> {
        work.coords_mut()[i] = x0 + dx;
        f(work)
    };
    let d = if order == 4 {
        let p1 = at(h, &mut work)?;
        let m1 = at(-h, &mut work)?;
        let p2 = at(T::of(2.0) * h, &mut work)?;
        let m2 = at(T::of(-2.0) * h, &mut work)?;
        ((p1 - m1).scale(T::of(8.0)) - (p2 - m2)).scale(T::one() / (T::of(12.0) * h))
    } else {
        let p1 = at(h, &mut work)?;
        let m1 = at(-h, &mut work)?;
        (p1 - m1).scale(T::one() / (T::of(2.0) * h))
    };
    Ok(d)
}

/// Plain coordinate gradient `(∂f/∂q_i)_i`.
pub fn gradient<T: Real, V: FdValue<T>>(
    mut f: impl FnMut(&MassedConfiguration<T>) -> Result<V>,
    cfg: &MassedConfiguration<T>,
    scheme: &FdScheme<T>,
) -> Result<Vec<V>> {
    let h = scheme.step(cfg);
    let mut out = Vec::with_capacity(cfg.dim());
    for i in 0..cfg.dim() {
        let d = partial(&mut f, cfg, i, h, scheme.order)?;
        if scheme.richardson {
            let d2 = partial(&mut f, cfg, i, h / T::of(2.0), scheme.order)?;
            let k = T::of(if scheme.order == 4 { 16.0 } else { 4.0 });
            out.push((d2.scale(k) - d).scale(T::one() / (k - T::one())));
        } else {
            out.push(d);
        }
    }
    Ok(out)
}

/// Conservative second-order stencil for `Σ_i ∂_i (m_i^{-1} a ∂_i ψ)` with absolute step `h`.
///
/// `a` is sampled at the half-step points and `ψ` at the full-step points.
pub fn flux_divergence_h<T: Real, V: FdValue<T>>(
    a: &mut impl FnMut(&MassedConfiguration<T>) -> Result<T>,
    psi: &mut impl FnMut(&MassedConfiguration<T>) -> Result<V>,
    cfg: &MassedConfiguration<T>,
    h: T,
) -> Result<V> {
    let mut work = cfg.clone();
    let p0 = psi(cfg)?;
    let mut acc: Option<V> = None;
    let half = h / T::of(2.0);
    for i in 0..cfg.dim() {
        let x0 = cfg.coords()[i];
        work.coords_mut()[i] = x0 + h;
        let pp = psi(&work)?;
        work.coords_mut()[i] = x0 - h;
        let pm = psi(&work)?;
        work.coords_mut()[i] = x0 + half;
        let ap = a(&work)?;
        work.coords_mut()[i] = x0 - half;
        let am = a(&work)?;
        work.coords_mut()[i] = x0;
        let term = ((pp - p0).scale(ap) - (p0 - pm).scale(am)).scale(T::one() / (cfg.coord_mass(i) * h * h));
        acc = Some(match acc {
            Some(s) => s + term,
            None => term,
        });
    }
    Ok(acc.unwrap_or_else(|| p0.scale(T::zero())))
}

/// [`flux_divergence_h`] at the scheme's step, with optional Richardson extrapolation
/// from `h` and `h/2` (the stencil error is even in `h`).
pub fn flux_divergence<T: Real, V: FdValue<T>>(
    mut a: impl FnMut(&MassedConfiguration<T>) -> Result<T>,
    mut psi: impl FnMut(&MassedConfiguration<T>) -> Result<V>,
    cfg: &MassedConfiguration<T>,
    scheme: &FdScheme<T>,
) -> Result<V> {
    let h = scheme.step(cfg);
    let coarse = flux_divergence_h(&mut a, &mut psi, cfg, h)?;
    if scheme.richardson || scheme.order == 4 {
        let fine = flux_divergence_h(&mut a, &mut psi, cfg, h / T::of(2.0))?;
        Ok((fine.scale(T::of(4.0)) - coarse).scale(T::one() / T::of(3.0)))
    } else {
        Ok(coarse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MassedConfiguration<f64> {
        MassedConfiguration::new(&[[0.1, 0.2, -0.3], [0.5, -0.4, 0.2], [-0.2, 0.3, 0.6]], &[1.0, 2.0, 0.5]).unwrap()
    }

    #[test]
    fn affine_gradient_is_exact() {
        let a: Vec<f64> = (0..9).map(|i| i as f64 - 3.5).collect();
        let g = gradient(|c: &MassedConfiguration<f64>| Ok(c.coords().iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() + 2.0), &cfg(), &FdScheme::default()).unwrap();
        for i in 0..9 {
            assert!((g[i] - a[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_gradient() {
        let c = cfg();
        let l = scale_moment(&c).sqrt();
        let scheme = FdScheme::new(1e-4 / l, 2, false).unwrap();
        let f = |c: &MassedConfiguration<f64>| Ok((-c.coords().iter().map(|x| x * x).sum::<f64>()).exp());
        let g = gradient(f, &c, &scheme).unwrap();
        let e = f(&c).unwrap();
        for i in 0..9 {
            assert!((g[i] + 2.0 * c.coords()[i] * e).abs() < 1e-8);
        }
    }

    #[test]
    fn fourth_order_error_scales_as_h4() {
        let c = cfg();
        let f = |c: &MassedConfiguration<f64>| Ok((c.coords()[0] * 3.0).sin());
        let exact = 3.0 * (3.0 * c.coords()[0]).cos();
        let err = |h: f64| (partial(&mut { f }, &c, 0, h, 4).unwrap() - exact).abs();
        let ratio = err(0.02) / err(0.01);
        assert!((ratio - 16.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn flux_form_matches_weighted_laplacian_of_gaussian() {
        // a = 1: Σ m_i^{-1} ∂_i² exp(-|q|²) = Σ m_i^{-1} (4 q_i² - 2) exp(-|q|²)
        let c = cfg();
        let scheme = FdScheme::new(1e-3, 2, true).unwrap();
        let psi = |c: &MassedConfiguration<f64>| Ok((-c.coords().iter().map(|x| x * x).sum::<f64>()).exp());
        let v = flux_divergence(|_: &MassedConfiguration<f64>| Ok(1.0), psi, &c, &scheme).unwrap();
        let e = psi(&c).unwrap();
        let exact: f64 = (0..9).map(|i| (4.0 * c.coords()[i].powi(2) - 2.0) * e / c.coord_mass(i)).sum();
        assert!((v - exact).abs() < 1e-6 * exact.abs(), "{v} vs {exact}");
    }
}
