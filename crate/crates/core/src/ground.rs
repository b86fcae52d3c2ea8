//! Minimizer of `‖w‖²_X` on the unit `L^q` sphere.
//!
//! Projected gradient descent in the metric of the form: with
//! `g = M|w|^{q−2}w` and `z = S⁻¹g`, the tangential gradient is
//! `G = w − z/⟨g,z⟩`. A unit step lands on `z` up to normalization, which is
//! nonlinear inverse iteration; Barzilai–Borwein steps accelerate it and a
//! halving fallback keeps the energy decreasing.

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, signed_pow};
use crate::operator::{lp_norm_pow, NonlocalForm, SpatialField};

#[derive(Debug, Clone)]
pub struct GroundState {
    /// Minimizer, `‖ψ‖_q = 1`, nonnegative when started from a nonnegative field.
    pub psi: SpatialField,
    /// `‖ψ‖²_X`, the Lagrange multiplier of `Sψ = μ M|ψ|^{q−2}ψ`.
    pub mu: f64,
    /// `‖Sψ − μ M|ψ|^{q−2}ψ‖_{X*}`.
    pub residual: f64,
    pub iterations: usize,
}

const MAX_ITERS: usize = 20_000;
const BB_MIN: f64 = 0.1;
const BB_MAX: f64 = 10.0;

fn normalize(mass: &[f64], w: &mut [f64], q: f64) {
    let nrm = lp_norm_pow(mass, w, q).powf(1.0 / q);
    w.iter_mut().for_each(|v| *v /= nrm);
}

struct Probe {
    w: Vec<f64>,
    energy: f64,
    /// `S⁻¹ M|w|^{q−2}w`.
    z: Vec<f64>,
    gz: f64,
    residual: f64,
}

fn probe(form: &NonlocalForm, q: f64, w: Vec<f64>) -> Probe {
    let sw = form.stiffness_apply(&w);
    let energy = dot(&w, &sw);
    let g: Vec<f64> = w
        .iter()
        .zip(form.mass())
        .map(|(&v, &m)| m * signed_pow(v, q - 1.0))
        .collect();
    let z = form.stiffness_solve(&g);
    let gz = dot(&g, &z);
    // r = Sw − E g and S⁻¹ r = w − E z, so ‖r‖²_* needs no extra solve.
    let r2: f64 = sw
        .iter()
        .zip(&g)
        .zip(w.iter().zip(&z))
        .map(|((s, g), (w, z))| (s - energy * g) * (w - energy * z))
        .sum();
    Probe {
        w,
        energy,
        z,
        gz,
        residual: r2.max(0.0).sqrt(),
    }
}

/// Runs the descent from `init` until the Lagrange residual is below `tol`.
pub fn ground_state(
    form: &NonlocalForm,
    q: f64,
    init: &SpatialField,
    tol: f64,
) -> Result<GroundState> {
    check_len(form.n(), init.len())?;
    if !(q > 1.0) {
        return Err(Error::Parameter(format!("q must exceed 1, got {q}")));
    }
    if init.is_zero() {
        return Err(Error::Parameter("initial field for the profile solver is zero".into()));
    }
    let mass = form.mass();
    let mut w: Vec<f64> = init.values().iter().map(|v| v.abs()).collect();
    normalize(mass, &mut w, q);
    let mut cur = probe(form, q, w);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    for it in 0..MAX_ITERS {
        if cur.residual <= tol {
            return Ok(GroundState {
                psi: SpatialField::new(cur.w)?,
                mu: cur.energy,
                residual: cur.residual,
                iterations: it,
            });
        }
        let grad: Vec<f64> = cur
            .w
            .iter()
            .zip(&cur.z)
            .map(|(w, z)| w - z / cur.gz)
            .collect();
        let mut alpha = match &prev {
            Some((dw, dg_prev)) => {
                let dg: Vec<f64> = grad.iter().zip(dg_prev).map(|(a, b)| a - b).collect();
                let num = form.bilinear(dw, dw);
                let den = form.bilinear(dw, &dg);
                if den > 0.0 {
                    (num / den).clamp(BB_MIN, BB_MAX)
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let noise = 64.0 * f64::EPSILON * cur.energy;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = cur
                .w
                .iter()
                .zip(&grad)
                .map(|(w, g)| w - alpha * g)
                .collect();
            if trial.iter().any(|v| *v < 0.0) && cur.w.iter().all(|v| *v >= 0.0) && alpha != 1.0 {
                alpha = 1.0;
                continue;
            }
            normalize(mass, &mut trial, q);
            let p = probe(form, q, trial);
            if p.energy <= cur.energy + noise {
                accepted = Some(p);
                break;
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else {
            return Err(Error::NonConvergence {
                what: "ground state descent",
                iterations: it,
                residual: cur.residual,
            });
        };
        let dw: Vec<f64> = next.w.iter().zip(&cur.w).map(|(a, b)| a - b).collect();
        prev = Some((dw, grad));
        cur = next;
    }
    Err(Error::NonConvergence {
        what: "ground state descent",
        iterations: MAX_ITERS,
        residual: cur.residual,
    })
}
