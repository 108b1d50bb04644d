//! Small dense linear algebra on row-major `n x n` buffers.

use crate::error::{degenerate, Result};
use crate::scalar::Real;

/// Diagonally pivoted `P A P^T = L D L^T` factorization of a symmetric
/// positive (semi)definite matrix, computed after Jacobi equilibration.
#[derive(Debug, Clone)]
pub struct PivotedLdlt<T> {
    n: usize,
    l: Vec<T>,
    d: Vec<T>,
    perm: Vec<usize>,
    scale: Vec<T>,
}

impl<T: Real> PivotedLdlt<T> {
    pub fn new(a: &[T], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut scale = vec![T::one(); n];
        for i in 0..n {
            let dii = a[i * n + i];
            if !(dii > T::zero()) {
                return Err(degenerate(format!("non-positive diagonal entry {i} in Gram matrix")));
            }
            scale[i] = T::one() / dii.sqrt();
        }
        let mut w = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                w[i * n + j] = a[i * n + j] * scale[i] * scale[j];
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut l = vec![T::zero(); n * n];
        let mut d = vec![T::zero(); n];
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if w[i * n + i] > w[p * n + p] {
                    p = i;
                }
            }
            if p != k {
                for j in 0..n {
                    w.swap(k * n + j, p * n + j);
                }
                for i in 0..n {
                    w.swap(i * n + k, i * n + p);
                }
                for j in 0..k {
                    l.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = w[k * n + k];
            if !(pivot > T::zero()) {
                return Err(degenerate("Gram matrix is singular"));
            }
            d[k] = pivot;
            l[k * n + k] = T::one();
            for i in k + 1..n {
                l[i * n + k] = w[i * n + k] / pivot;
            }
            for i in k + 1..n {
                for j in k + 1..n {
                    let upd = l[i * n + k] * pivot * l[j * n + k];
                    w[i * n + j] -= upd;
                }
            }
        }
        Ok(Self { n, l, d, perm, scale })
    }

    /// Ratio of the largest to the smallest pivot of the equilibrated matrix.
    pub fn condition_estimate(&self) -> T {
        let mut hi = T::zero();
        let mut lo = T::infinity();
        for &x in &self.d {
            hi = hi.max(x);
            lo = lo.min(x);
        }
        hi / lo
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y: Vec<T> = (0..n).map(|k| b[self.perm[k]] * self.scale[self.perm[k]]).collect();
        for i in 0..n {
            for j in 0..i {
                let t = self.l[i * n + j] * y[j];
                y[i] -= t;
            }
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let t = self.l[j * n + i] * y[j];
                y[i] -= t;
            }
        }
        let mut x = vec![T::zero(); n];
        for k in 0..n {
            x[self.perm[k]] = y[k] * self.scale[self.perm[k]];
        }
        x
    }

    /// Determinant of the original (unequilibrated) matrix.
    pub fn determinant(&self) -> T {
        let mut det = T::one();
        for k in 0..self.n {
            det *= self.d[k] / (self.scale[k] * self.scale[k]);
        }
        det
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order and the eigenvectors as columns.
pub fn symmetric_eigen<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = m[i * n + j] * m[i * n + j];
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].partial_cmp(&m[j * n + j]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = vec![T::zero(); n * n];
    for (c, &i) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + c] = v[k * n + i];
        }
    }
    (vals, vecs)
}

/// Numerical rank of a symmetric positive semidefinite matrix.
pub fn psd_rank<T: Real>(a: &[T], n: usize, rel_tol: T) -> usize {
    let (vals, _) = symmetric_eigen(a, n);
    let top = vals.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()));
    vals.iter().filter(|&&x| x > rel_tol * top).count()
}

/// Solves a general linear system by Gaussian elimination with partial pivoting.
pub fn solve_dense<T: Real>(a: &[T], b: &[T], n: usize) -> Result<Vec<T>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if m[i * n + k].abs() > m[p * n + k].abs() {
                p = i;
            }
        }
        if m[p * n + k] == T::zero() {
            return Err(degenerate("singular linear system"));
        }
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let factor = m[i * n + k] / m[k * n + k];
            for j in k..n {
                let t = factor * m[k * n + j];
                m[i * n + j] -= t;
            }
            let t = factor * x[k];
            x[i] -= t;
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= m[i * n + j] * x[j];
        }
        x[i] = s / m[i * n + i];
    }
    Ok(x)
}

pub fn determinant<T: Real>(a: &[T], n: usize) -> T {
    let mut m = a.to_vec();
    let mut det = T::one();
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if m[i * n + k].abs() > m[p * n + k].abs() {
                p = i;
            }
        }
        if m[p * n + k] == T::zero() {
            return T::zero();
        }
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            det = -det;
        }
        det *= m[k * n + k];
        for i in k + 1..n {
            let factor = m[i * n + k] / m[k * n + k];
            for j in k..n {
                let t = factor * m[k * n + j];
                m[i * n + j] -= t;
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Vec<f64> {
        let mut b = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                b[i * n + j] = ((i * 7 + j * 3) % 5) as f64 - 1.5 + if i == j { 3.0 } else { 0.0 };
            }
        }
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum();
            }
        }
        a
    }

    #[test]
    fn ldlt_solves_spd_system() {
        let n = 7;
        let a = spd(n);
        let x0: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
        let b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j] * x0[j]).sum()).collect();
        let f = PivotedLdlt::new(&a, n).unwrap();
        let x = f.solve(&b);
        for i in 0..n {
            assert!((x[i] - x0[i]).abs() < 1e-10, "{i}: {} vs {}", x[i], x0[i]);
        }
        let det = determinant(&a, n);
        assert!((f.determinant() - det).abs() < 1e-9 * det.abs());
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let n = 5;
        let a = spd(n);
        let (vals, vecs) = symmetric_eigen(&a, n);
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| vecs[i * n + k] * vals[k] * vecs[j * n + k]).sum();
                assert!((r - a[i * n + j]).abs() < 1e-10);
            }
        }
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rank_of_singular_matrix() {
        let a = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        assert_eq!(psd_rank(&a, 3, 1e-12), 2);
    }
}
