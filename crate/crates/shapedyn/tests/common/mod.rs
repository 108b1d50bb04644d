#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use std::sync::Arc;

use num_complex::Complex;
use shapedyn::kinematics::*;
use shapedyn::quantum::{Gauge, WaveFunctionModel};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn random_config(rng: &mut ChaCha20Rng, n: usize) -> MassedConfiguration<f64> {
    loop {
        let pos: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let cfg = MassedConfiguration::new(&pos, &masses).unwrap();
        let l2 = scale_moment(&cfg);
        let det = shapedyn::scalar::mat3_det(&inertia_tensor(&cfg));
        let mut min_r2 = f64::INFINITY;
        for a in 0..n {
            for b in a + 1..n {
                let d = shapedyn::scalar::sub3(cfg.position(a), cfg.position(b));
                min_r2 = min_r2.min(shapedyn::scalar::dot3(d, d));
            }
        }
        if det > 1e-2 * l2.powi(3) && min_r2 > 0.05 * l2 {
            return cfg;
        }
    }
}

pub fn random_similarity(rng: &mut ChaCha20Rng) -> SimilarityTransform<f64> {
    let q = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let a = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
    SimilarityTransform::from_quaternion(q, a, rng.gen_range(0.3..3.0))
}

pub fn random_tangent(rng: &mut ChaCha20Rng, dim: usize) -> TangentVector<f64> {
    TangentVector::new((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

pub fn equilateral() -> MassedConfiguration<f64> {
    let s = 3f64.sqrt() / 2.0;
    MassedConfiguration::with_unit_masses(&[[1.0, 0.0, 0.0], [-0.5, s, 0.0], [-0.5, -s, 0.0]]).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Invariant test function built from pair-distance ratios.
pub fn invariant_wf(k: usize, probes: &[MassedConfiguration<f64>]) -> WaveFunctionModel<f64> {
    let c = [0.9, 1.1, 0.7][k % 3];
    let w = [0.4, -0.3, 0.6][k % 3];
    let eval = Arc::new(move |q: &MassedConfiguration<f64>| {
        let l2 = scale_moment(q);
        let r = |a: usize, b: usize| {
            let d = shapedyn::scalar::sub3(q.position(a), q.position(b));
            shapedyn::scalar::dot3(d, d) / l2
        };
        let (x, y) = (r(0, 1), r(0, 2));
        Complex::new((-(x - c).powi(2)).exp() * (1.0 + w * y), w * x * y)
    });
    WaveFunctionModel::new(eval, Gauge::G1, 0.1, probes).unwrap()
}

