//! Subsystems: environment frames, conditional wave functions and the
//! conditional Born distribution, with a Monte Carlo check of the latter.

use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bohm::equilibrium_density;
use crate::error::{degenerate, invalid_param, Error, Result};
use crate::kinematics::*;
use crate::rng::StreamRng;
use crate::quantum::{Gauge, JacobianRoute, WaveFunctionModel};
use crate::sampling::{metropolis_with_moves, Bounds, ExtraMove, MetropolisOptions, SamplerDiagnostics};
use crate::scalar::*;
use crate::stats::{ks_one_sample, KsResult};

/// Partition of the particle labels into system and environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSplit {
    pub system: Vec<usize>,
    pub environment: Vec<usize>,
    /// Masses of all particles of the universe, by label.
    pub masses: Vec<f64>,
}

impl SystemSplit {
    pub fn new(system: Vec<usize>, masses: Vec<f64>) -> Result<Self> {
        let n = masses.len();
        let mut seen = vec![false; n];
        for &a in &system {
            if a >= n || seen[a] {
                return Err(invalid_param("system", format!("label {a} out of range or repeated")));
            }
            seen[a] = true;
        }
        let environment: Vec<usize> = (0..n).filter(|a| !seen[*a]).collect();
        if environment.len() < 3 {
            return Err(invalid_param("system", format!("environment needs at least 3 particles, got {}", environment.len())));
        }
        if system.is_empty() {
            return Err(invalid_param("system", "system must contain at least one particle"));
        }
        if masses.iter().any(|m| !(*m > 0.0)) {
            return Err(invalid_param("masses", "masses must be positive"));
        }
        Ok(Self { system, environment, masses })
    }

    pub fn system_dim(&self) -> usize {
        3 * self.system.len()
    }

    pub fn environment_masses(&self) -> Vec<f64> {
        self.environment.iter().map(|&a| self.masses[a]).collect()
    }

    /// Universe configuration with the system at `x` (flat, 3 per particle) and the environment at `frame`.
    pub fn assemble(&self, frame: &EnvironmentFrame, x: &[f64]) -> Result<MassedConfiguration<f64>> {
        if x.len() != self.system_dim() {
            return Err(Error::DimensionMismatch { expected: self.system_dim(), got: x.len() });
        }
        if frame.positions.len() != self.environment.len() {
            return Err(Error::DimensionMismatch { expected: self.environment.len(), got: frame.positions.len() });
        }
        let mut pos = vec![[0.0; 3]; self.masses.len()];
        for (k, &a) in self.system.iter().enumerate() {
            pos[a] = [x[3 * k], x[3 * k + 1], x[3 * k + 2]];
        }
        for (k, &a) in self.environment.iter().enumerate() {
            pos[a] = frame.positions[k];
        }
        MassedConfiguration::new(&pos, &self.masses)
    }

    /// Splits a universe configuration into flat system coordinates and the environment frame.
    pub fn split(&self, cfg: &MassedConfiguration<f64>) -> (Vec<f64>, EnvironmentFrame) {
        let x = self.system.iter().flat_map(|&a| cfg.position(a)).collect();
        let positions = self.environment.iter().map(|&a| cfg.position(a)).collect();
        (x, EnvironmentFrame { positions })
    }
}

/// A lifted environment configuration: a point in the fiber over the environment shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentFrame {
    pub positions: Vec<Vec3<f64>>,
}

impl EnvironmentFrame {
    /// Checks that the environment is not collinear.
    pub fn new(positions: Vec<Vec3<f64>>) -> Result<Self> {
        let frame = Self { positions };
        frame.canonical()?;
        Ok(frame)
    }

    /// The canonical frame of an environment shape: first two particles at `(∓1, 0, 0)`,
    /// the third at `(Re z, Im z, 0)`, further ones at `rest`.
    pub fn bookstein(z: Complex<f64>, rest: &[Vec3<f64>]) -> Result<Self> {
        if !(z.im > 0.0) {
            return Err(degenerate("environment shape must have Im z > 0"));
        }
        let mut positions = vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [z.re, z.im, 0.0]];
        positions.extend_from_slice(rest);
        Ok(Self { positions })
    }

    /// The similarity taking this frame to its canonical Bookstein frame, and the
    /// Bookstein coordinate of the first three environment particles.
    pub fn canonical(&self) -> Result<(SimilarityTransform<f64>, Complex<f64>)> {
        if self.positions.len() < 3 {
            return Err(invalid_param("frame", "environment needs at least 3 particles"));
        }
        let (a, b, c) = (self.positions[0], self.positions[1], self.positions[2]);
        let base = sub3(b, a);
        let len = norm3(base);
        let mid = scale3(0.5, add3(a, b));
        let r = sub3(c, mid);
        let e1 = scale3(1.0 / len, base);
        let along = dot3(r, e1);
        let perp = sub3(r, scale3(along, e1));
        let h = norm3(perp);
        if !(len > 0.0) || !(h > 1e-12 * len) {
            return Err(degenerate("collinear environment has no frame"));
        }
        let e2 = scale3(1.0 / h, perp);
        let e3 = cross3(e1, e2);
        let scale = 2.0 / len;
        let rotation = [e1, e2, e3];
        let translation = scale3(-scale, mat3_vec(&rotation, mid));
        let t = SimilarityTransform { rotation, translation, scale };
        Ok((t, Complex::new(scale * along, scale * h)))
    }

    pub fn transformed(&self, t: &SimilarityTransform<f64>) -> Self {
        Self { positions: self.positions.iter().map(|p| t.apply_point(*p)).collect() }
    }
}

/// `ψ̂(x̂) = Ψ̂(x̂, Ŷ)` with `Ŷ` the frame.
pub fn conditional_wavefunction(
    wf: &WaveFunctionModel<f64>,
    split: &SystemSplit,
    frame: &EnvironmentFrame,
    x: &[f64],
) -> Result<Complex<f64>> {
    wf.eval(&split.assemble(frame, x)?)
}

/// Axis-aligned box with a uniform lattice of cell midpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_grid: usize,
}

impl ProbeBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n_grid: usize) -> Result<Self> {
        Bounds::new(lo.clone(), hi.clone())?;
        if n_grid < 2 {
            return Err(invalid_param("n_grid", "need at least 2 cells per axis"));
        }
        if (n_grid as f64).powi(lo.len() as i32) > 5e7 {
            return Err(invalid_param("n_grid", "lattice too large"));
        }
        Ok(Self { lo, hi, n_grid })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64, n_grid: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], n_grid)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / self.n_grid as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    pub fn len(&self) -> usize {
        self.n_grid.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Midpoint of the cell with linear index `idx` (last axis fastest).
    pub fn midpoint(&self, idx: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut r = idx;
        for k in (0..d).rev() {
            let i = r % self.n_grid;
            r /= self.n_grid;
            out[k] = self.lo[k] + (i as f64 + 0.5) * self.spacing(k);
        }
        out
    }
}

/// Normalized lattice density of the system given its environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalTable {
    pub probe: ProbeBox,
    /// Density at the cell midpoints; `Σ values · cell_volume = 1`.
    pub values: Vec<f64>,
}

impl ConditionalTable {
    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.values) * self.probe.cell_volume()
    }

    /// Marginal density of coordinate `k` at the cell midpoints.
    pub fn marginal_density(&self, k: usize) -> Vec<f64> {
        let n = self.probe.n_grid;
        let d = self.probe.dim();
        let stride = n.pow((d - 1 - k) as u32);
        let mut cell = vec![0.0; n];
        for (idx, v) in self.values.iter().enumerate() {
            cell[(idx / stride) % n] += v;
        }
        let w = self.probe.cell_volume() / self.probe.spacing(k);
        cell.iter().map(|c| c * w).collect()
    }

    pub fn marginal_cdf(&self, k: usize) -> MarginalCdf {
        MarginalCdf::new(self.probe.lo[k], self.probe.spacing(k), self.marginal_density(k))
    }

    /// Midpoint-rule integral of `g` against the density.
    pub fn expectation(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        let vol = self.probe.cell_volume();
        self.values.iter().enumerate().map(|(i, v)| v * g(&self.probe.midpoint(i))).sum::<f64>() * vol
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// CDF of a one-dimensional density known at uniformly spaced midpoints. Inside
/// each cell the density is the quadratic through the neighbouring midpoint
/// values, which keeps the CDF accurate to third order in the spacing; a
/// piecewise-constant density would leave an O(h²) error visible to KS tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalCdf {
    pub lo: f64,
    pub h: f64,
    pub density: Vec<f64>,
    /// CDF at the cell edges.
    pub edges: Vec<f64>,
}

impl MarginalCdf {
    pub fn new(lo: f64, h: f64, density: Vec<f64>) -> Self {
        let n = density.len();
        let mut edges = Vec::with_capacity(n + 1);
        edges.push(0.0);
        let mut acc = 0.0;
        let mut out = Self { lo, h, density, edges: Vec::new() };
        for j in 0..n {
            acc += out.partial(j, 0.5);
            edges.push(acc);
        }
        let total = acc;
        out.edges = edges.into_iter().map(|e| e / total).collect();
        out.density.iter_mut().for_each(|p| *p /= total);
        out
    }

    /// Integral of the quadratic over cell `j` from its left edge to local position `u ∈ [-1/2, 1/2]`.
    fn partial(&self, j: usize, u: f64) -> f64 {
        let p = |i: isize| if i < 0 || i as usize >= self.density.len() { 0.0 } else { self.density[i as usize] };
        let j = j as isize;
        let (pm, p0, pp) = (p(j - 1), p(j), p(j + 1));
        let b = 0.5 * (pp - pm);
        let c = 0.5 * (pp - 2.0 * p0 + pm);
        self.h * (p0 * (u + 0.5) + 0.5 * b * (u * u - 0.25) + c / 3.0 * (u * u * u + 0.125))
    }

    pub fn at(&self, x: f64) -> f64 {
        let n = self.density.len();
        let t = (x - self.lo) / self.h;
        if !(t > 0.0) {
            return 0.0;
        }
        if t >= n as f64 {
            return 1.0;
        }
        let j = (t.floor() as usize).min(n - 1);
        (self.edges[j] + self.partial(j, t - j as f64 - 0.5)).clamp(0.0, 1.0)
    }
}

/// `|ψ̂(x̂)|²` with the Lebesgue weights of the gauge, normalized over the probe box.
pub fn conditional_born_distribution(
    gauge: Gauge,
    model: &ConformalModel<f64>,
    wf: &WaveFunctionModel<f64>,
    split: &SystemSplit,
    frame: &EnvironmentFrame,
    probe: &ProbeBox,
    route: JacobianRoute,
) -> Result<ConditionalTable> {
    if probe.dim() != split.system_dim() {
        return Err(Error::DimensionMismatch { expected: split.system_dim(), got: probe.dim() });
    }
    wf.require(gauge)?;
    let raw: Vec<f64> = (0..probe.len())
        .map(|i| equilibrium_density(gauge, model, wf, &split.assemble(frame, &probe.midpoint(i))?, route))
        .collect::<Result<_>>()?;
    let mass = pairwise_sum(&raw) * probe.cell_volume();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::ZeroConditional);
    }
    Ok(ConditionalTable { probe: probe.clone(), values: raw.into_iter().map(|v| v / mass).collect() })
}

/// Marginal conditional CDFs tabulated on a grid of keys, interpolated multilinearly.
/// Axes with a single node are constant in that direction.
#[derive(Debug, Clone)]
pub struct ConditionalCdfGrid {
    pub axes: Vec<Vec<f64>>,
    pub probe: ProbeBox,
    /// Per node (first axis slowest), per system coordinate.
    cdfs: Vec<Vec<MarginalCdf>>,
}

impl ConditionalCdfGrid {
    /// `table(key)` returns the conditional table at a grid node.
    pub fn build(axes: Vec<Vec<f64>>, table: impl Fn(&[f64]) -> Result<ConditionalTable> + Sync) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty() || a.windows(2).any(|w| !(w[0] < w[1]))) {
            return Err(invalid_param("axes", "need increasing, non-empty node lists"));
        }
        let count: usize = axes.iter().map(|a| a.len()).product();
        let keys: Vec<Vec<f64>> = (0..count).map(|i| node_key(&axes, i)).collect();
        let tables: Vec<ConditionalTable> = keys.par_iter().map(|k| table(k)).collect::<Result<_>>()?;
        let probe = tables[0].probe.clone();
        let cdfs = tables.iter().map(|t| (0..probe.dim()).map(|k| t.marginal_cdf(k)).collect()).collect();
        Ok(Self { axes, probe, cdfs })
    }

    /// Whether `key` lies inside the tabulated range.
    pub fn covers(&self, key: &[f64]) -> bool {
        self.axes.iter().zip(key).all(|(a, &v)| a.len() == 1 || (v >= a[0] && v <= a[a.len() - 1]))
    }

    /// Conditional marginal CDF of system coordinate `k` at `x`, given `key`.
    pub fn cdf(&self, key: &[f64], k: usize, x: f64) -> f64 {
        // Multilinear weights over the surrounding nodes.
        let mut corners: Vec<(usize, f64)> = vec![(0, 1.0)];
        for (d, axis) in self.axes.iter().enumerate() {
            let (i, w) = bracket(axis, key[d]);
            let stride: usize = self.axes[d + 1..].iter().map(|a| a.len()).product();
            let mut next = Vec::with_capacity(corners.len() * 2);
            for (idx, wt) in corners {
                next.push((idx + i * stride, wt * (1.0 - w)));
                if w > 0.0 {
                    next.push((idx + (i + 1) * stride, wt * w));
                }
            }
            corners = next;
        }
        corners.iter().map(|(idx, w)| w * self.cdfs[*idx][k].at(x)).sum()
    }
}

fn node_key(axes: &[Vec<f64>], mut i: usize) -> Vec<f64> {
    let mut key = vec![0.0; axes.len()];
    for d in (0..axes.len()).rev() {
        key[d] = axes[d][i % axes[d].len()];
        i /= axes[d].len();
    }
    key
}

fn bracket(axis: &[f64], v: f64) -> (usize, f64) {
    let n = axis.len();
    if n == 1 || v <= axis[0] {
        return (0, 0.0);
    }
    if v >= axis[n - 1] {
        return (n - 1, 0.0);
    }
    let i = axis.partition_point(|a| *a <= v) - 1;
    (i, (v - axis[i]) / (axis[i + 1] - axis[i]))
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Sampling domain of the universe for the conditional check. The environment's
/// center of mass is pinned at the origin; both restrictions only involve the
/// environment or are rotation invariant, so they leave the conditional law intact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniverseDomain {
    /// The system particle stays within this distance of the environment's center of mass.
    pub system_radius: f64,
    /// Allowed range of the environment scale `L_env`.
    pub environment_scale: (f64, f64),
}

impl UniverseDomain {
    /// Universe configuration from the reduced coordinates `(x, y_a, y_b)`; the
    /// third environment particle balances the environment's center of mass.
    fn configuration(&self, split: &SystemSplit, r: &[f64]) -> Result<MassedConfiguration<f64>> {
        let m: Vec<f64> = split.environment_masses();
        let mut env = vec![[r[3], r[4], r[5]], [r[6], r[7], r[8]], [0.0; 3]];
        for k in 0..3 {
            env[2][k] = -(m[0] * r[3 + k] + m[1] * r[6 + k]) / m[2];
        }
        split.assemble(&EnvironmentFrame { positions: env }, &r[..3])
    }

    fn inside(&self, split: &SystemSplit, cfg: &MassedConfiguration<f64>) -> bool {
        let (x, frame) = split.split(cfg);
        let env: Vec<f64> = frame.positions.iter().flatten().copied().collect();
        let l = scale_moment_of(&env, &split.environment_masses()).sqrt();
        norm3([x[0], x[1], x[2]]) <= self.system_radius && l >= self.environment_scale.0 && l <= self.environment_scale.1
    }

    fn bounds(&self, split: &SystemSplit) -> Result<Bounds> {
        let m = split.environment_masses();
        let r = self.system_radius;
        let (ya, yb) = (self.environment_scale.1 / m[0].sqrt(), self.environment_scale.1 / m[1].sqrt());
        Bounds::new(vec![-r, -r, -r, -ya, -ya, -ya, -yb, -yb, -yb], vec![r, r, r, ya, ya, ya, yb, yb, yb])
    }
}

fn rotate_reduced(r: &mut [f64], rng: &mut StreamRng) {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(rand_distr::StandardNormal));
    let rot = quaternion_to_matrix(q);
    for a in 0..r.len() / 3 {
        let v = mat3_vec(&rot, [r[3 * a], r[3 * a + 1], r[3 * a + 2]]);
        r[3 * a..3 * a + 3].copy_from_slice(&v);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCheckOptions {
    pub n: usize,
    pub seed: u64,
    /// Environment shape cells along Re z and Im z.
    pub cells: (usize, usize),
    /// Quantiles of the sampled environment shapes spanned by the cells.
    pub window_quantile: f64,
    /// CDF interpolation nodes per axis over the cell window.
    pub nodes: usize,
    /// Box for the system in the canonical environment frame.
    pub probe: ProbeBox,
    pub min_cell_count: usize,
    pub alpha: f64,
    pub route: JacobianRoute,
    pub sampler: MetropolisOptions,
    /// Width of the extra random-walk update of the system coordinates.
    pub system_step: f64,
    /// Width of the environment update that carries the system along.
    pub environment_step: f64,
    /// Negative control: read the system in the frame of the environment with its first two particles swapped.
    pub wrong_frame: bool,
}

impl ConditionalCheckOptions {
    pub fn new(n: usize, seed: u64, probe: ProbeBox) -> Self {
        Self {
            n,
            seed,
            cells: (6, 6),
            window_quantile: 0.02,
            nodes: 13,
            probe,
            min_cell_count: 50,
            alpha: 0.01,
            route: JacobianRoute::Invariant,
            sampler: MetropolisOptions::default(),
            system_step: 0.3,
            environment_step: 0.08,
            wrong_frame: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub center: [f64; 2],
    pub count: usize,
    /// Bonferroni-corrected minimum over the system coordinates; `None` for excluded cells.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalReport {
    /// Pooled probability-integral-transform KS test per system coordinate.
    pub pooled: Vec<KsResult>,
    /// Bonferroni-corrected minimum of the pooled p-values.
    pub aggregate_p: f64,
    pub cells: Vec<CellReport>,
    pub excluded_cells: usize,
    pub excluded_fraction: f64,
    /// Cells failing at `alpha` (informational; expected about `alpha` of them by chance).
    pub failing_cells: usize,
    pub samples_in_window: usize,
    pub sampler: SamplerDiagnostics,
    pub passed: bool,
}

/// Samples the universe from the equilibrium density, bins by environment shape,
/// and tests the system's distribution in the environment frame against the
/// conditional Born distribution at the sample's own environment shape.
/// Requires a single-particle system and a three-particle environment.
pub fn monte_carlo_conditional_check(
    gauge: Gauge,
    model: &ConformalModel<f64>,
    wf: &WaveFunctionModel<f64>,
    split: &SystemSplit,
    domain: &UniverseDomain,
    opts: &ConditionalCheckOptions,
) -> Result<ConditionalReport> {
    if split.system.len() != 1 || split.environment.len() != 3 {
        return Err(invalid_param("split", "conditional check supports one system particle and a three-particle environment"));
    }
    if gauge != Gauge::G1 {
        return Err(invalid_param("gauge", "environment-shape conditioning needs a similarity-invariant G1 wave function"));
    }
    if !(domain.system_radius > 0.0) || !(domain.environment_scale.0 > 0.0 && domain.environment_scale.0 < domain.environment_scale.1) {
        return Err(invalid_param("domain", "need a positive system radius and 0 < L_min < L_max"));
    }
    let density = |r: &[f64]| -> f64 {
        match domain.configuration(split, r) {
            Ok(cfg) if domain.inside(split, &cfg) => equilibrium_density(gauge, model, wf, &cfg, opts.route).unwrap_or(0.0),
            _ => 0.0,
        }
    };
    // Extra moves: an exact random rotation about the environment's center of
    // mass; a wider random walk of the system alone; a random walk of the
    // environment that carries the system along in the environment frame; and a
    // log-symmetric dilation. The last two are accepted with their Jacobians.
    let bounds = domain.bounds(split)?;
    let frame_scale = |r: &[f64]| norm3(sub3([r[6], r[7], r[8]], [r[3], r[4], r[5]])) / 2.0;
    let moves = |r: &mut Vec<f64>, mut p: f64, rng: &mut StreamRng| -> f64 {
        let accept = |r: &mut Vec<f64>, p: &mut f64, trial: Vec<f64>, jac: f64, rng: &mut StreamRng| {
            let q = if bounds.contains(&trial) { density(&trial) } else { 0.0 };
            if q > 0.0 && rng.gen::<f64>() * *p < q * jac {
                *r = trial;
                *p = q;
            }
        };
        rotate_reduced(r, rng);

        let mut trial = r.clone();
        for v in &mut trial[..3] {
            *v += opts.system_step * rng.sample::<f64, _>(StandardNormal);
        }
        accept(r, &mut p, trial, 1.0, rng);

        let mut trial = r.clone();
        for v in &mut trial[3..] {
            *v += opts.environment_step * rng.sample::<f64, _>(StandardNormal);
        }
        if let (Ok(old), Ok(new)) = (domain.configuration(split, r), domain.configuration(split, &trial)) {
            let (to_old, to_new) = (split.split(&old).1.canonical(), split.split(&new).1.canonical());
            if let (Ok((t_old, _)), Ok((t_new, _))) = (to_old, to_new) {
                let carried = t_new.inverse().apply_point(t_old.apply_point([r[0], r[1], r[2]]));
                trial[..3].copy_from_slice(&carried);
                let jac = (frame_scale(&trial) / frame_scale(r)).powi(3);
                accept(r, &mut p, trial, jac, rng);
            }
        }

        let lambda = (0.3 * rng.sample::<f64, _>(StandardNormal)).exp();
        let trial: Vec<f64> = r.iter().map(|v| v * lambda).collect();
        accept(r, &mut p, trial, lambda.powi(r.len() as i32), rng);
        p
    };
    let observe = |r: &[f64]| -> Vec<f64> {
        let Ok(cfg) = domain.configuration(split, r) else { return vec![0.0; 6] };
        let (x, frame) = split.split(&cfg);
        let Ok((t, z)) = frame.canonical() else { return vec![0.0; 6] };
        let xh = t.apply_point([x[0], x[1], x[2]]);
        vec![xh[0], xh[1], xh[2], z.re, z.im, frame_scale(r)]
    };
    let (reduced_samples, diag) =
        metropolis_with_moves(&density, &bounds, opts.n, opts.seed, &opts.sampler, &ExtraMove { apply: &moves, invariants: &observe })?;
    let samples: Vec<MassedConfiguration<f64>> = reduced_samples.iter().map(|r| domain.configuration(split, r)).collect::<Result<_>>()?;

    // System coordinates in the environment frame, and the environment shape.
    let reduced: Vec<(Vec3<f64>, Complex<f64>)> = samples
        .iter()
        .map(|cfg| {
            let (x, mut frame) = split.split(cfg);
            if opts.wrong_frame {
                frame.positions.swap(0, 1);
            }
            let (t, z) = frame.canonical()?;
            Ok((t.apply_point([x[0], x[1], x[2]]), z))
        })
        .collect::<Result<_>>()?;

    let mut re: Vec<f64> = reduced.iter().map(|r| r.1.re).collect();
    let mut im: Vec<f64> = reduced.iter().map(|r| r.1.im).collect();
    let (re_lo, re_hi) = quantile_window(&mut re, opts.window_quantile);
    let (im_lo, im_hi) = quantile_window(&mut im, opts.window_quantile);
    if !(im_lo > 0.0) {
        return Err(degenerate("environment shapes reach the collinear boundary"));
    }
    let grid = ConditionalCdfGrid::build(vec![linspace(re_lo, re_hi, opts.nodes), linspace(im_lo, im_hi, opts.nodes)], |key| {
        let frame = EnvironmentFrame::bookstein(Complex::new(key[0], key[1]), &[])?;
        conditional_born_distribution(gauge, model, wf, split, &frame, &opts.probe, opts.route)
    })?;

    let (nx, ny) = opts.cells;
    let mut cell_pits: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); 3]; nx * ny];
    for (x, z) in &reduced {
        if z.re < re_lo || z.re > re_hi || z.im < im_lo || z.im > im_hi {
            continue;
        }
        let i = (((z.re - re_lo) / (re_hi - re_lo) * nx as f64) as usize).min(nx - 1);
        let j = (((z.im - im_lo) / (im_hi - im_lo) * ny as f64) as usize).min(ny - 1);
        let key = [z.re, z.im];
        for k in 0..3 {
            cell_pits[i * ny + j][k].push(grid.cdf(&key, k, x[k]));
        }
    }
    let uniform = |u: f64| u.clamp(0.0, 1.0);
    let mut cells = Vec::with_capacity(nx * ny);
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); 3];
    let (mut excluded, mut failing, mut in_window) = (0, 0, 0);
    for i in 0..nx {
        for j in 0..ny {
            let pits = &cell_pits[i * ny + j];
            let count = pits[0].len();
            in_window += count;
            let center = [
                re_lo + (i as f64 + 0.5) * (re_hi - re_lo) / nx as f64,
                im_lo + (j as f64 + 0.5) * (im_hi - im_lo) / ny as f64,
            ];
            if count < opts.min_cell_count {
                excluded += 1;
                cells.push(CellReport { center, count, p_value: None });
                continue;
            }
            let p = pits.iter().map(|u| ks_one_sample(u, uniform).p_value).fold(1.0, f64::min);
            let p = (3.0 * p).min(1.0);
            if p < opts.alpha {
                failing += 1;
            }
            for k in 0..3 {
                pooled[k].extend_from_slice(&pits[k]);
            }
            cells.push(CellReport { center, count, p_value: Some(p) });
        }
    }
    if pooled[0].is_empty() {
        return Err(invalid_param("n", "no environment cell reached the minimum count"));
    }
    let pooled: Vec<KsResult> = pooled.iter().map(|u| ks_one_sample(u, uniform)).collect();
    let aggregate_p = (3.0 * pooled.iter().map(|r| r.p_value).fold(1.0, f64::min)).min(1.0);
    let excluded_fraction = excluded as f64 / (nx * ny) as f64;
    Ok(ConditionalReport {
        pooled,
        aggregate_p,
        cells,
        excluded_cells: excluded,
        excluded_fraction,
        failing_cells: failing,
        samples_in_window: in_window,
        sampler: diag,
        passed: aggregate_p > opts.alpha && excluded_fraction <= 0.05,
    })
}

fn quantile_window(v: &mut [f64], q: f64) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let at = |p: f64| v[((p * (n - 1) as f64).round() as usize).min(n - 1)];
    (at(q), at(1.0 - q))
}

/// Similarity-invariant test states for a one-particle system in a three-particle
/// environment: a Gaussian in the frame coordinates of the system times a Gaussian
/// in the environment shape, or a two-term superposition of such products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SubsystemState {
    Product,
    Entangled,
}

pub fn subsystem_test_state(split: &SystemSplit, kind: SubsystemState) -> Result<WaveFunctionModel<f64>> {
    if split.system.len() != 1 || split.environment.len() != 3 {
        return Err(invalid_param("split", "test states need one system particle and a three-particle environment"));
    }
    let frame = EnvironmentFrame::new(vec![[-1.0, 0.1, 0.0], [1.1, -0.1, 0.2], [0.1, 1.7, -0.1]])?;
    let probe = split.assemble(&frame, &[0.2, 0.4, 0.1])?;
    let split = split.clone();
    let sigma = 0.5;
    let sigma_s = 0.25;
    let z0 = Complex::new(0.0, 3f64.sqrt());
    let gauss3 = move |x: Vec3<f64>, mu: Vec3<f64>| (-dot3(sub3(x, mu), sub3(x, mu)) / (2.0 * sigma * sigma)).exp();
    let gauss_z = move |z: Complex<f64>, c: Complex<f64>| (-(z - c).norm_sqr() / (2.0 * sigma_s * sigma_s)).exp();
    let eval = move |cfg: &MassedConfiguration<f64>| -> Complex<f64> {
        let (x, frame) = split.split(cfg);
        let Ok((t, z)) = frame.canonical() else { return Complex::new(f64::NAN, 0.0) };
        let xh = t.apply_point([x[0], x[1], x[2]]);
        let a = Complex::new(gauss3(xh, [0.3, 0.5, 0.0]) * gauss_z(z, z0), 0.0);
        match kind {
            SubsystemState::Product => a,
            SubsystemState::Entangled => {
                let b = Complex::new(xh[2], 0.5) * gauss3(xh, [-0.4, 0.8, 0.3]) * gauss_z(z, z0 + Complex::new(0.3, 0.0));
                a + b * 1.5
            }
        }
    };
    WaveFunctionModel::new(Arc::new(eval), Gauge::G1, 0.1, &[probe])
}
