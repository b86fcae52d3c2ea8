//! Spatial discretization: the interval, nodal fields, and the quadratic form
//! of the restricted fractional Laplacian.
//!
//! Fields are continuous piecewise-linear functions on a uniform grid of the
//! interval `(a, b)`, extended by zero outside. The fractional form
//!
//! ```text
//! ‖u‖²_X = ½ ∬_{ℝ×ℝ} (ū(x) − ū(y))² / |x − y|^{1+2θ} dx dy
//! ```
//!
//! is evaluated exactly on that space. Because the zero extension lives on the
//! whole line and every hat function is a translate of one reference hat, the
//! stiffness matrix is symmetric Toeplitz: `S_ij = h^{1−2θ} s(|i − j|)`. For a
//! piecewise-linear function the second derivative is a sum of point masses,
//! so the form reduces to a double sum of the kernel `|r|^{3−2θ}` (the
//! fourth antiderivative of `|r|^{−1−2θ}`) over the grid, and `s(k)` is a
//! fourth difference of that kernel. The exterior part of the integral is
//! included automatically. For `θ = 1` the classical Dirichlet stiffness
//! `tridiag(−1, 2, −1)/h` is used instead.
//!
//! The normalization constant of the fractional Laplacian is set to 1, as is
//! customary in the variational literature; decay constants computed with
//! this crate are relative to that convention.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, gauss_legendre, SpdFactor, TridiagonalLdl};

/// Uniform grid of `n` interior nodes on `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain1D {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub h: f64,
}

impl Domain1D {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::Domain(format!("need a < b, got ({a}, {b})")));
        }
        if n == 0 {
            return Err(Error::Domain("need at least one interior node".into()));
        }
        Ok(Self {
            a,
            b,
            n,
            h: (b - a) / (n + 1) as f64,
        })
    }

    /// Coordinate of interior node `i` (0-based, so `x(0) = a + h`).
    pub fn x(&self, i: usize) -> f64 {
        self.a + (i + 1) as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }
}

/// Exponents of `∂t(|u|^{q−2}u) + (−Δ)^θ u = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub q: f64,
    pub theta: f64,
    /// Hölder conjugate `q/(q−1)`.
    pub q_conj: f64,
    /// Porous-medium exponent `1/(q−1)`.
    pub m: f64,
    /// `(q−1)/|q−2|`, absent in the linear case.
    pub lambda_q: Option<f64>,
}

impl FlowParams {
    pub fn new(q: f64, theta: f64) -> Result<Self> {
        if !(q > 1.0) || !q.is_finite() {
            return Err(Error::Parameter(format!("q must exceed 1, got {q}")));
        }
        check_theta(theta)?;
        let lambda_q = if q == 2.0 {
            None
        } else {
            Some((q - 1.0) / (q - 2.0).abs())
        };
        Ok(Self {
            q,
            theta,
            q_conj: q / (q - 1.0),
            m: 1.0 / (q - 1.0),
            lambda_q,
        })
    }

    pub fn is_linear(&self) -> bool {
        self.q == 2.0
    }

    pub(crate) fn lambda_or(&self, what: &'static str) -> Result<f64> {
        self.lambda_q.ok_or(Error::LinearCase(what))
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "theta must lie in (0, 1], got {theta}"
        )))
    }
}

/// Nodal values at the interior nodes of a [`Domain1D`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialField(Vec<f64>);

impl SpatialField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value {} at node {i}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Samples `f` at the interior nodes.
    pub fn from_fn(domain: &Domain1D, f: impl Fn(f64) -> f64) -> Self {
        Self(domain.nodes().into_iter().map(f).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn sub(&self, other: &SpatialField) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<usize> for SpatialField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for SpatialField {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<SpatialField> for Vec<f64> {
    fn from(f: SpatialField) -> Self {
        f.0
    }
}

/// Discrete `‖·‖²_X` form and lumped mass on a uniform grid.
#[derive(Debug, Clone)]
pub struct NonlocalForm {
    domain: Domain1D,
    theta: f64,
    /// First column of the symmetric Toeplitz stiffness matrix.
    column: Vec<f64>,
    dense: Option<DMatrix<f64>>,
    factor: SpdFactor,
    mass: Vec<f64>,
}

/// Assembles the stiffness form of order `theta` on `domain`.
pub fn build_form(domain: &Domain1D, theta: f64) -> Result<NonlocalForm> {
    check_theta(theta)?;
    if domain.n == 0 {
        return Err(Error::Domain("need at least one interior node".into()));
    }
    let n = domain.n;
    let h = domain.h;
    let column = if theta == 1.0 {
        let mut c = vec![0.0; n];
        c[0] = 2.0 / h;
        if n > 1 {
            c[1] = -1.0 / h;
        }
        c
    } else {
        let scale = h.powf(1.0 - 2.0 * theta);
        toeplitz_profile(theta, n)
            .into_iter()
            .map(|s| scale * s)
            .collect()
    };

    let (dense, factor) = if theta == 1.0 {
        let diag = vec![column[0]; n];
        let off = vec![if n > 1 { column[1] } else { 0.0 }; n.saturating_sub(1)];
        let f = TridiagonalLdl::new(&diag, &off)
            .ok_or_else(|| Error::SingularOperator("Dirichlet stiffness".into()))?;
        (None, SpdFactor::Tridiagonal(f))
    } else {
        let m = DMatrix::from_fn(n, n, |i, j| column[i.abs_diff(j)]);
        let f = SpdFactor::dense(m.clone()).ok_or_else(|| {
            Error::SingularOperator(format!("fractional stiffness, theta = {theta}"))
        })?;
        (Some(m), f)
    };

    Ok(NonlocalForm {
        domain: *domain,
        theta,
        column,
        dense,
        factor,
        mass: vec![h; n],
    })
}

/// `s(k)` for unit spacing, `k = 0..n`.
fn toeplitz_profile(theta: f64, n: usize) -> Vec<f64> {
    // Close to the diagonal the fourth difference is evaluated directly; far
    // away it suffers cancellation, so it is written as the integral of the
    // cubic B-spline against the kernel itself.
    const NEAR: usize = 6;
    let eps = 1.0 - 2.0 * theta;
    let denom = (3.0 - 2.0 * theta) * (2.0 - 2.0 * theta) * (-2.0 * theta);
    // |r|^{3−2θ} minus r² (annihilated by the fourth difference), divided by
    // (1 − 2θ); well defined at θ = 1/2 where it becomes r² log|r|.
    let g = |r: f64| -> f64 {
        let r = r.abs();
        if r == 0.0 {
            return 0.0;
        }
        let l = r.ln();
        let t = if eps == 0.0 {
            l
        } else {
            (eps * l).exp_m1() / eps
        };
        r * r * t
    };
    let (gx, gw) = gauss_legendre(16);
    let kernel_exp = -1.0 - 2.0 * theta;
    (0..n)
        .map(|k| {
            if k < NEAR {
                let kf = k as f64;
                let d4 = g(kf - 2.0) - 4.0 * g(kf - 1.0) + 6.0 * g(kf) - 4.0 * g(kf + 1.0)
                    + g(kf + 2.0);
                -d4 / denom
            } else {
                let mut acc = 0.0;
                for cell in -2i32..2 {
                    let lo = cell as f64;
                    for (x, w) in gx.iter().zip(&gw) {
                        let t = lo + 0.5 * (x + 1.0);
                        acc += 0.5 * w * cubic_bspline(t) * (k as f64 + t).powf(kernel_exp);
                    }
                }
                -acc
            }
        })
        .collect()
}

fn cubic_bspline(t: f64) -> f64 {
    let a = t.abs();
    if a >= 2.0 {
        0.0
    } else if a >= 1.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    }
}

impl NonlocalForm {
    pub fn domain(&self) -> &Domain1D {
        &self.domain
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n(&self) -> usize {
        self.domain.n
    }

    /// Lumped mass weights `m_i = h`.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `true` when the stiffness is the tridiagonal Dirichlet matrix.
    pub fn is_banded(&self) -> bool {
        self.dense.is_none()
    }

    /// `S_ij`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.column[i.abs_diff(j)]
    }

    /// First column of the (Toeplitz) stiffness matrix.
    pub fn toeplitz_column(&self) -> &[f64] {
        &self.column
    }

    /// Dense copy of the stiffness matrix.
    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        match &self.dense {
            Some(m) => m.clone(),
            None => DMatrix::from_fn(self.n(), self.n(), |i, j| self.entry(i, j)),
        }
    }

    /// `S u`, as a functional (not divided by the mass).
    pub fn stiffness_apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        match &self.dense {
            None => {
                let d = self.column[0];
                let o = if n > 1 { self.column[1] } else { 0.0 };
                (0..n)
                    .map(|i| {
                        let mut s = d * u[i];
                        if i > 0 {
                            s += o * u[i - 1];
                        }
                        if i + 1 < n {
                            s += o * u[i + 1];
                        }
                        s
                    })
                    .collect()
            }
            Some(m) => (0..n)
                .map(|i| m.row(i).iter().zip(u).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    /// Solves `S z = f` for a functional `f`.
    pub fn stiffness_solve(&self, f: &[f64]) -> Vec<f64> {
        self.factor.solve(f)
    }

    /// `√(fᵀ S⁻¹ f)`: the dual norm of a functional given by its values on the
    /// nodal basis.
    pub fn functional_dual_norm(&self, f: &[f64]) -> f64 {
        let z = self.stiffness_solve(f);
        dot(f, &z).max(0.0).sqrt()
    }

    /// `uᵀ S v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(u, &self.stiffness_apply(v))
    }

    /// Factorizes `diag(d) + c · W S W` with `W = diag(w)` (identity when `w`
    /// is `None`). Used by the Newton solvers.
    pub(crate) fn factor_congruent(
        &self,
        d: &[f64],
        c: f64,
        w: Option<&[f64]>,
    ) -> Option<SpdFactor> {
        let n = self.n();
        let wi = |i: usize| w.map_or(1.0, |w| w[i]);
        match &self.dense {
            None => {
                let diag: Vec<f64> = (0..n)
                    .map(|i| d[i] + c * self.column[0] * wi(i) * wi(i))
                    .collect();
                let off: Vec<f64> = (0..n.saturating_sub(1))
                    .map(|i| c * self.column[1] * wi(i) * wi(i + 1))
                    .collect();
                TridiagonalLdl::new(&diag, &off).map(SpdFactor::Tridiagonal)
            }
            Some(m) => {
                let mut a = m.clone();
                for j in 0..n {
                    for i in 0..n {
                        a[(i, j)] *= c * wi(i) * wi(j);
                    }
                    a[(j, j)] += d[j];
                }
                SpdFactor::dense(a)
            }
        }
    }

    /// Mass-weighted product `Σ m_i u_i v_i`.
    pub fn mass_dot(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass
            .iter()
            .zip(u.iter().zip(v))
            .map(|(m, (a, b))| m * a * b)
            .sum()
    }

    /// `true` when every off-diagonal entry is non-positive and every row sum
    /// non-negative. In that case `S` is an M-matrix and the discrete scheme
    /// inherits the comparison principle and the nonlinear energy estimates.
    pub fn is_m_matrix(&self) -> bool {
        let n = self.n();
        if self.column[1..].iter().any(|&s| s > 0.0) {
            return false;
        }
        (0..n).all(|i| (0..n).map(|j| self.entry(i, j)).sum::<f64>() >= 0.0)
    }

    fn check(&self, u: &SpatialField) -> Result<()> {
        check_len(self.n(), u.len())
    }
}

/// `uᵀ S u`, the discrete `‖u‖²_X`.
pub fn gagliardo_energy(form: &NonlocalForm, u: &SpatialField) -> Result<f64> {
    form.check(u)?;
    Ok(form.bilinear(u.values(), u.values()).max(0.0))
}

/// `(Σ m_i |u_i|^p)^{1/p}`.
pub fn lp_norm(form: &NonlocalForm, u: &SpatialField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("need p >= 1, got {p}")));
    }
    form.check(u)?;
    Ok(lp_norm_pow(form.mass(), u.values(), p).powf(1.0 / p))
}

/// `Σ m_i |u_i|^p` without the final root.
pub(crate) fn lp_norm_pow(mass: &[f64], u: &[f64], p: f64) -> f64 {
    mass.iter()
        .zip(u)
        .map(|(m, v)| {
            if p == 2.0 {
                m * v * v
            } else {
                m * v.abs().powf(p)
            }
        })
        .sum()
}

/// Discrete `‖ρ‖_{X*}` of a nodal density: `√(ρᵀ M z)` with `S z = M ρ`.
pub fn dual_norm(form: &NonlocalForm, rho: &SpatialField) -> Result<f64> {
    form.check(rho)?;
    let f: Vec<f64> = rho
        .values()
        .iter()
        .zip(form.mass())
        .map(|(r, m)| r * m)
        .collect();
    let norm = form.functional_dual_norm(&f);
    if !norm.is_finite() {
        return Err(Error::SingularOperator("dual norm solve".into()));
    }
    Ok(norm)
}

/// Nodal representation `M⁻¹ S u` of `(−Δ)^θ u`.
pub fn apply_operator(form: &NonlocalForm, u: &SpatialField) -> Result<SpatialField> {
    form.check(u)?;
    let su = form.stiffness_apply(u.values());
    Ok(SpatialField(
        su.iter().zip(form.mass()).map(|(s, m)| s / m).collect(),
    ))
}

/// Smallest generalized eigenpair of `S φ = λ M φ`.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: f64,
    /// Normalized to unit mass-weighted L² norm, nonnegative sum.
    pub vector: SpatialField,
    pub residual: f64,
    pub iterations: usize,
}

/// Shifted inverse iteration for the principal eigenpair.
pub fn principal_eigenpair(form: &NonlocalForm) -> Result<Eigenpair> {
    const MAX_ITERS: usize = 500;
    const TOL: f64 = 1e-10;
    let n = form.n();
    let mass = form.mass().to_vec();
    let normalize = |x: &mut Vec<f64>| {
        let nrm = form.mass_dot(x, x).sqrt();
        let sign = if x.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        x.iter_mut().for_each(|v| *v *= sign / nrm);
    };
    let rayleigh = |x: &[f64]| form.bilinear(x, x) / form.mass_dot(x, x);
    let residual = |x: &[f64], lam: f64| {
        let sx = form.stiffness_apply(x);
        let r: f64 = sx
            .iter()
            .zip(x.iter().zip(&mass))
            .map(|(s, (v, m))| (s - lam * m * v).powi(2))
            .sum();
        r.sqrt() / dot(&sx, &sx).sqrt()
    };

    // A smooth positive start has a large component along the ground state.
    let dom = form.domain();
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let s = (dom.x(i) - dom.a) / dom.length();
            s * (1.0 - s)
        })
        .collect();
    normalize(&mut x);

    let mut shifted: Option<(f64, SpdFactor)> = None;
    let mut lam = rayleigh(&x);
    for it in 1..=MAX_ITERS {
        let rhs: Vec<f64> = x.iter().zip(&mass).map(|(v, m)| v * m).collect();
        x = match &shifted {
            Some((_, f)) => f.solve(&rhs),
            None => form.stiffness_solve(&rhs),
        };
        normalize(&mut x);
        lam = rayleigh(&x);
        let res = residual(&x, lam);
        if res < TOL {
            return Ok(Eigenpair {
                value: lam,
                vector: SpatialField(x),
                residual: res,
                iterations: it,
            });
        }
        if shifted.is_none() && it >= 4 && res < 1e-2 {
            // S − σM stays positive definite for σ < λ₁; the Rayleigh
            // quotient is an upper bound, so back off until it factors.
            let mut sigma = 0.9 * lam;
            for _ in 0..30 {
                let d: Vec<f64> = mass.iter().map(|m| -sigma * m).collect();
                if let Some(f) = form.factor_congruent(&d, 1.0, None) {
                    shifted = Some((sigma, f));
                    break;
                }
                sigma *= 0.5;
            }
        }
    }
    Err(Error::NonConvergence {
        what: "principal eigenpair",
        iterations: MAX_ITERS,
        residual: residual(&x, lam),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit(n: usize) -> Domain1D {
        Domain1D::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn domain_rejects_bad_input() {
        assert!(matches!(Domain1D::new(1.0, 0.0, 3), Err(Error::Domain(_))));
        assert!(matches!(Domain1D::new(0.0, 1.0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn theta_out_of_range() {
        let d = unit(5);
        assert!(matches!(build_form(&d, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(build_form(&d, 1.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn flow_params_derived_exponents() {
        let p = FlowParams::new(3.0, 0.5).unwrap();
        assert_eq!(p.q_conj, 1.5);
        assert_eq!(p.m, 0.5);
        assert_eq!(p.lambda_q, Some(2.0));
        assert!(FlowParams::new(2.0, 1.0).unwrap().lambda_q.is_none());
        assert!(FlowParams::new(1.0, 1.0).is_err());
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let f = build_form(&unit(15), 0.5).unwrap();
        let z = SpatialField::zeros(15);
        assert_eq!(gagliardo_energy(&f, &z).unwrap(), 0.0);
        assert_eq!(lp_norm(&f, &z, 3.0).unwrap(), 0.0);
        assert_eq!(dual_norm(&f, &z).unwrap(), 0.0);
        assert!(apply_operator(&f, &z).unwrap().is_zero());
    }

    #[test]
    fn single_node_dirichlet_energy() {
        let f = build_form(&unit(1), 1.0).unwrap();
        let u = SpatialField::new(vec![1.0]).unwrap();
        assert_relative_eq!(gagliardo_energy(&f, &u).unwrap(), 4.0);
    }

    #[test]
    fn energy_is_quadratic() {
        let d = unit(30);
        let f = build_form(&d, 0.3).unwrap();
        let u = SpatialField::from_fn(&d, |x| x * (1.0 - x) * (3.0 * x).cos());
        let e = gagliardo_energy(&f, &u).unwrap();
        let e3 = gagliardo_energy(&f, &u.scaled(3.0)).unwrap();
        assert_relative_eq!(e3, 9.0 * e, max_relative = 1e-14);
    }

    #[test]
    fn sine_dirichlet_energy() {
        let d = unit(200);
        let f = build_form(&d, 1.0).unwrap();
        let u = SpatialField::from_fn(&d, |x| (PI * x).sin());
        let e = gagliardo_energy(&f, &u).unwrap();
        assert!((e / (PI * PI / 2.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn lp_norm_of_constant() {
        let d = unit(99);
        let f = build_form(&d, 1.0).unwrap();
        let u = SpatialField::from_fn(&d, |_| 1.0);
        assert_relative_eq!(lp_norm(&f, &u, 2.0).unwrap(), 0.99f64.sqrt(), max_relative = 1e-14);
        assert!(lp_norm(&f, &u, 0.5).is_err());
    }

    #[test]
    fn lp_norm_of_sine() {
        let d = unit(200);
        let f = build_form(&d, 1.0).unwrap();
        let u = SpatialField::from_fn(&d, |x| (PI * x).sin());
        assert!((lp_norm(&f, &u, 2.0).unwrap() / 0.5f64.sqrt() - 1.0).abs() < 0.01);
    }

    #[test]
    fn dirichlet_stiffness_is_tridiagonal() {
        let d = unit(7);
        let f = build_form(&d, 1.0).unwrap();
        let h = d.h;
        for i in 0..7usize {
            for j in 0..7 {
                let want = match i.abs_diff(j) {
                    0 => 2.0 / h,
                    1 => -1.0 / h,
                    _ => 0.0,
                };
                assert_eq!(f.entry(i, j), want);
            }
        }
        assert!(f.is_banded());
    }

    #[test]
    fn reference_profile_values() {
        // Independent values from adaptive quadrature of the hat-pair integral.
        let s = toeplitz_profile(0.5, 4);
        assert_relative_eq!(s[0], 2.77258872, max_relative = 1e-7);
        assert_relative_eq!(s[1], -0.60142215, max_relative = 1e-7);
        assert_relative_eq!(s[2], -0.36690014, max_relative = 1e-7);
        assert_relative_eq!(s[3], -0.1260913, max_relative = 1e-6);
        let s = toeplitz_profile(0.25, 4);
        assert_relative_eq!(s[0], 3.5346224, max_relative = 1e-7);
        assert_relative_eq!(s[1], -0.04155705, max_relative = 1e-6);
    }

    #[test]
    fn near_and_far_branches_agree() {
        // The two evaluation routes for s(k) must join smoothly at the switch.
        for theta in [0.2, 0.5, 0.8] {
            let s = toeplitz_profile(theta, 12);
            for k in 6..12 {
                let asym = -(k as f64).powf(-1.0 - 2.0 * theta);
                assert!((s[k] / asym - 1.0).abs() < 0.2, "theta {theta}, k {k}");
            }
            if theta == 0.5 {
                continue;
            }
            let g = |r: f64| r.powf(3.0 - 2.0 * theta);
            let denom = (3.0 - 2.0 * theta) * (2.0 - 2.0 * theta) * (1.0 - 2.0 * theta) * (-2.0 * theta);
            let k = 6.0;
            let d4 = g(k - 2.0) - 4.0 * g(k - 1.0) + 6.0 * g(k) - 4.0 * g(k + 1.0) + g(k + 2.0);
            assert_relative_eq!(s[6], -d4 / denom, max_relative = 1e-9);
        }
    }

    #[test]
    fn stiffness_is_spd_and_m_matrix() {
        for theta in [0.25, 0.5, 0.75, 1.0] {
            let f = build_form(&unit(40), theta).unwrap();
            assert!(f.is_m_matrix(), "theta {theta}");
            let s = f.stiffness_matrix();
            assert_eq!(s.clone(), s.transpose());
        }
    }

    #[test]
    fn principal_eigenvalue_dirichlet() {
        let d = Domain1D::new(0.0, PI, 400).unwrap();
        let f = build_form(&d, 1.0).unwrap();
        let e = principal_eigenpair(&f).unwrap();
        assert!((e.value - 1.0).abs() < 1e-3);
        assert!(e.vector.values().iter().all(|&v| v > 0.0));
        assert!(e.residual < 1e-10);

        let f = build_form(&unit(200), 1.0).unwrap();
        let e = principal_eigenpair(&f).unwrap();
        assert!((e.value / (PI * PI) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn apply_operator_second_difference() {
        let d = unit(6);
        let f = build_form(&d, 1.0).unwrap();
        let u = SpatialField::new(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5]).unwrap();
        let au = apply_operator(&f, &u).unwrap();
        let h2 = d.h * d.h;
        for i in 0..6 {
            let l = if i > 0 { u[i - 1] } else { 0.0 };
            let r = if i < 5 { u[i + 1] } else { 0.0 };
            assert_relative_eq!(au[i], -(l - 2.0 * u[i] + r) / h2, max_relative = 1e-12);
        }
    }

    #[test]
    fn eigenfield_is_scaled_by_operator() {
        let f = build_form(&unit(60), 0.5).unwrap();
        let e = principal_eigenpair(&f).unwrap();
        let au = apply_operator(&f, &e.vector).unwrap();
        let diff = au.sub(&e.vector.scaled(e.value));
        assert!(diff.max_abs() < 1e-8 * e.value * e.vector.max_abs());
        // ‖φ‖_{X*} = ‖φ‖₂ / √λ for an eigenfield.
        let dn = dual_norm(&f, &e.vector).unwrap();
        let l2 = lp_norm(&f, &e.vector, 2.0).unwrap();
        assert_relative_eq!(dn, l2 / e.value.sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let f = build_form(&unit(5), 1.0).unwrap();
        let u = SpatialField::zeros(4);
        assert!(matches!(
            gagliardo_energy(&f, &u),
            Err(Error::DimensionMismatch { expected: 5, found: 4 })
        ));
    }
}
