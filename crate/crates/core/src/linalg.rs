//! Small numerical kernels shared by the operator and the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// LDLᵀ factorization of a symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub(crate) struct TridiagonalLdl {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl TridiagonalLdl {
    /// `diag` has length n, `off` has length n - 1. Returns `None` when a
    /// pivot is not strictly positive.
    pub(crate) fn new(diag: &[f64], off: &[f64]) -> Option<Self> {
        let n = diag.len();
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        for i in 0..n {
            let mut piv = diag[i];
            if i > 0 {
                piv -= l[i - 1] * l[i - 1] * d[i - 1];
            }
            if !(piv > 0.0) || !piv.is_finite() {
                return None;
            }
            d[i] = piv;
            if i + 1 < n {
                l[i] = off[i] / piv;
            }
        }
        Some(Self { d, l })
    }

    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut x = rhs.to_vec();
        for i in 1..n {
            x[i] -= self.l[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.l[i] * x[i + 1];
        }
        x
    }
}

/// Factorization of a symmetric positive definite system, banded or dense.
#[derive(Debug, Clone)]
pub(crate) enum SpdFactor {
    Tridiagonal(TridiagonalLdl),
    Dense(Cholesky<f64, Dyn>),
}

impl SpdFactor {
    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            SpdFactor::Tridiagonal(f) => f.solve(rhs),
            SpdFactor::Dense(c) => {
                let b = DVector::from_column_slice(rhs);
                c.solve(&b).as_slice().to_vec()
            }
        }
    }

    pub(crate) fn dense(m: DMatrix<f64>) -> Option<Self> {
        Cholesky::new(m).map(SpdFactor::Dense)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Signed power `|r|^p sgn r`, with the convention `sgn 0 = 0`.
#[inline]
pub fn signed_pow(r: f64, p: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        r.signum() * r.abs().powf(p)
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve_matches_dense() {
        let diag = [4.0, 5.0, 6.0, 7.0];
        let off = [-1.0, -2.0, 0.5];
        let f = TridiagonalLdl::new(&diag, &off).unwrap();
        let rhs = [1.0, 2.0, 3.0, 4.0];
        let x = f.solve(&rhs);
        let mut m = DMatrix::zeros(4, 4);
        for i in 0..4 {
            m[(i, i)] = diag[i];
            if i < 3 {
                m[(i, i + 1)] = off[i];
                m[(i + 1, i)] = off[i];
            }
        }
        let r = &m * DVector::from_column_slice(&x) - DVector::from_column_slice(&rhs);
        assert!(r.norm() < 1e-13);
    }

    #[test]
    fn tridiagonal_rejects_indefinite() {
        assert!(TridiagonalLdl::new(&[1.0, 1.0], &[2.0]).is_none());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn signed_pow_at_zero() {
        assert_eq!(signed_pow(0.0, 0.5), 0.0);
        assert_eq!(signed_pow(-4.0, 0.5), -2.0);
    }
}
