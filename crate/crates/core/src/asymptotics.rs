//! Rescaled trajectories, extinction-time estimation, stationary profiles and
//! convergence of the rescaled flow to them.
//!
//! With `λ_q = (q − 1)/|q − 2|` the rescaled function
//!
//! ```text
//! 1 < q < 2:  v = (t + 1)^{1/(2−q)} u,      s = log(t + 1)
//! q > 2:      v = (t* − t)^{−1/(q−2)} u,    s = log(t* / (t* − t))
//! ```
//!
//! solves `∂_s(|v|^{q−2}v) + (−Δ)^θ v = λ_q |v|^{q−2}v`, whose nonnegative
//! stationary solution is the rescaled ground state.

use serde::Serialize;

use crate::diagnostics::{linear_fit, CheckOutcome, InequalityLedger, Severity};
use crate::error::{check_len, Error, Result};
use crate::ground::ground_state;
use crate::linalg::{dot, signed_pow};
use crate::operator::{lp_norm_pow, FlowParams, NonlocalForm, SpatialField};
use crate::stepper::{StepRecord, Trajectory};

/// Spacing of rescaled samples.
pub const SAMPLE_DS: f64 = 0.05;
/// Fraction of the crossing time where the extinction fit window starts.
pub const FIT_WINDOW_START: f64 = 0.9;
/// Samples with `‖u‖_q^{q−2}` below this fraction of the window start are
/// dropped from the fit, where the scheme's own extinction dominates.
pub const FIT_FLOOR: f64 = 0.01;
/// Slack of the `J` and `K` monotonicity checks, relative to `|J(φ)|`.
pub const RESCALED_SLACK: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct ExtinctionFit {
    pub t_star: f64,
    /// Coefficient of determination of the affine fit.
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Extinction time from an affine fit of `‖u‖_q^{q−2}` in `t`.
pub fn estimate_extinction_time(traj: &Trajectory) -> Result<f64> {
    Ok(fit_extinction_time(traj)?.t_star)
}

/// [`estimate_extinction_time`] with the fit diagnostics.
pub fn fit_extinction_time(traj: &Trajectory) -> Result<ExtinctionFit> {
    let q = traj.params.q;
    let samples: Vec<(f64, f64)> = traj.records.iter().map(|r| (r.t, r.lq_norm(q))).collect();
    fit_extinction_samples(q, &samples, traj.ext_tol)
}

/// Fit from `(t, ‖u(t)‖_q)` samples; the crossing is the first sample below
/// `ext_tol`.
pub fn fit_extinction_samples(q: f64, samples: &[(f64, f64)], ext_tol: f64) -> Result<ExtinctionFit> {
    if q <= 2.0 {
        return Err(Error::Parameter(format!("extinction needs q > 2, got {q}")));
    }
    let cross = samples
        .iter()
        .position(|s| s.1 < ext_tol)
        .ok_or(Error::NotExtinct)?;
    let t_c = samples[cross].0;
    let y = |n: f64| n.powf(q - 2.0);
    let start = samples[..cross]
        .iter()
        .position(|s| s.0 >= FIT_WINDOW_START * t_c)
        .unwrap_or(0);
    let y0 = y(samples.get(start).map_or(0.0, |s| s.1));
    let pts: Vec<(f64, f64)> = samples[start..cross]
        .iter()
        .map(|s| (s.0, y(s.1)))
        .filter(|p| p.1 >= FIT_FLOOR * y0)
        .collect();
    if pts.len() < 3 {
        return Err(Error::Parameter(format!(
            "only {} samples in the extinction fit window; reduce tau",
            pts.len()
        )));
    }
    let (a, b, r2) = linear_fit(&pts);
    if !(b < 0.0) {
        return Err(Error::Numerical("extinction fit has nonnegative slope".into()));
    }
    Ok(ExtinctionFit {
        t_star: -a / b,
        r_squared: r2,
        window: (pts[0].0, pts[pts.len() - 1].0),
        points: pts.len(),
    })
}

/// `½‖w‖²_X − (λ_q/q)‖w‖_q^q`.
#[allow(non_snake_case)]
pub fn J_functional(form: &NonlocalForm, params: &FlowParams, w: &SpatialField) -> Result<f64> {
    check_len(form.n(), w.len())?;
    let lambda = params.lambda_or("J functional")?;
    let x = form.bilinear(w.values(), w.values());
    Ok(0.5 * x - lambda / params.q * lp_norm_pow(form.mass(), w.values(), params.q))
}

/// `(1/q′)‖w‖_q^q − (λ_q/2)‖|w|^{q−2}w‖²_{X*}`.
#[allow(non_snake_case)]
pub fn K_functional(form: &NonlocalForm, params: &FlowParams, w: &SpatialField) -> Result<f64> {
    check_len(form.n(), w.len())?;
    let lambda = params.lambda_or("K functional")?;
    let f = density_functional(form, params.q, w.values());
    let dual2 = dot(&f, &form.stiffness_solve(&f)).max(0.0);
    Ok(lp_norm_pow(form.mass(), w.values(), params.q) / params.q_conj - 0.5 * lambda * dual2)
}

fn density_functional(form: &NonlocalForm, q: f64, w: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(form.mass())
        .map(|(&v, &m)| m * signed_pow(v, q - 1.0))
        .collect()
}

/// `‖S v − λ_q M|v|^{q−2}v‖_{X*}`, the residual of the stationary equation.
pub fn stationary_residual(form: &NonlocalForm, params: &FlowParams, v: &SpatialField) -> Result<f64> {
    check_len(form.n(), v.len())?;
    let lambda = params.lambda_or("stationary residual")?;
    let sv = form.stiffness_apply(v.values());
    let g = density_functional(form, params.q, v.values());
    let r: Vec<f64> = sv.iter().zip(&g).map(|(s, g)| s - lambda * g).collect();
    Ok(form.functional_dual_norm(&r))
}

#[derive(Debug, Clone, Serialize)]
pub struct RescaledSample {
    pub s: f64,
    pub t: f64,
    pub step: usize,
    pub v: SpatialField,
    pub j: f64,
    pub k: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RescaledTrajectory {
    pub params: FlowParams,
    pub samples: Vec<RescaledSample>,
    /// Extinction time used for `q > 2`.
    pub t_star_used: Option<f64>,
}

/// Maps original time to rescaled time and the amplitude factor of `v`.
#[derive(Debug, Clone, Copy)]
struct Scaling {
    q: f64,
    t_star: Option<f64>,
}

impl Scaling {
    fn new(params: &FlowParams, t_star: Option<f64>) -> Result<Self> {
        let q = params.q;
        if params.is_linear() {
            return Err(Error::LinearCase("rescaling"));
        }
        if q > 2.0 {
            match t_star {
                Some(ts) if ts > 0.0 && ts.is_finite() => {}
                _ => {
                    return Err(Error::Parameter(
                        "rescaling with q > 2 needs a positive extinction time".into(),
                    ))
                }
            }
        }
        Ok(Self {
            q,
            t_star: if q > 2.0 { t_star } else { None },
        })
    }

    fn s_of(&self, t: f64) -> Option<f64> {
        match self.t_star {
            None => Some((t + 1.0).ln()),
            Some(ts) if t < ts => Some((ts / (ts - t)).ln()),
            Some(_) => None,
        }
    }

    fn t_of(&self, s: f64) -> f64 {
        match self.t_star {
            None => s.exp() - 1.0,
            Some(ts) => ts * (-(-s).exp_m1()),
        }
    }

    fn factor(&self, t: f64) -> f64 {
        match self.t_star {
            None => (t + 1.0).powf(1.0 / (2.0 - self.q)),
            Some(ts) => (ts - t).powf(-1.0 / (self.q - 2.0)),
        }
    }
}

/// Builds a rescaled trajectory from records fed in time order, keeping the
/// record nearest to each target time `t(s_k)`, `s_k = k · SAMPLE_DS`.
pub struct Rescaler<'a> {
    form: &'a NonlocalForm,
    params: FlowParams,
    scaling: Scaling,
    s_max: f64,
    next_k: usize,
    prev: Option<StepRecord>,
    out: RescaledTrajectory,
}

impl<'a> Rescaler<'a> {
    /// Samples up to `s_max` (unbounded when infinite).
    pub fn new(form: &'a NonlocalForm, params: &FlowParams, t_star: Option<f64>, s_max: f64) -> Result<Self> {
        let scaling = Scaling::new(params, t_star)?;
        Ok(Self {
            form,
            params: *params,
            scaling,
            s_max,
            next_k: 0,
            prev: None,
            out: RescaledTrajectory {
                params: *params,
                samples: Vec::new(),
                t_star_used: scaling.t_star,
            },
        })
    }

    fn target(&self) -> Option<f64> {
        let s = self.next_k as f64 * SAMPLE_DS;
        (s <= self.s_max * (1.0 + 1e-12)).then(|| self.scaling.t_of(s))
    }

    fn emit(&mut self, rec: &StepRecord) -> Result<()> {
        let Some(s) = self.scaling.s_of(rec.t) else {
            return Ok(());
        };
        if self.out.samples.last().is_some_and(|l| l.step >= rec.step) {
            return Ok(());
        }
        let v = rec.u.scaled(self.scaling.factor(rec.t));
        let j = J_functional(self.form, &self.params, &v)?;
        let k = K_functional(self.form, &self.params, &v)?;
        self.out.samples.push(RescaledSample {
            s,
            t: rec.t,
            step: rec.step,
            v,
            j,
            k,
        });
        Ok(())
    }

    /// Feeds the next record.
    pub fn push(&mut self, rec: StepRecord) -> Result<()> {
        if self.scaling.s_of(rec.t).is_none() {
            return Ok(());
        }
        while let Some(target) = self.target() {
            if rec.t < target {
                break;
            }
            let pick_prev = self
                .prev
                .as_ref()
                .is_some_and(|p| (target - p.t) < (rec.t - target));
            if pick_prev {
                let p = self.prev.take().expect("checked above");
                self.emit(&p)?;
                self.prev = Some(p);
            } else {
                self.emit(&rec)?;
            }
            self.next_k += 1;
        }
        self.prev = Some(rec);
        Ok(())
    }

    /// Ends the stream. The last record also serves the next target when it
    /// is closer to it than to the previous one, so a run ending just short
    /// of `t(s_max)` still yields its final sample.
    pub fn finish(mut self) -> Result<RescaledTrajectory> {
        if let (Some(p), Some(_)) = (self.prev.take(), self.target()) {
            let target_s = self.next_k as f64 * SAMPLE_DS;
            if self.scaling.s_of(p.t).is_some_and(|s| s >= target_s - 0.5 * SAMPLE_DS) {
                self.emit(&p)?;
            }
        }
        Ok(self.out)
    }
}

/// Rescales a stored trajectory; `t_star` is required when `q > 2`, and only
/// records strictly before it are used.
pub fn rescale(
    form: &NonlocalForm,
    traj: &Trajectory,
    t_star: Option<f64>,
) -> Result<RescaledTrajectory> {
    check_len(form.n(), traj.domain.n)?;
    let mut r = Rescaler::new(form, &traj.params, t_star, f64::INFINITY)?;
    for rec in &traj.records {
        r.push(rec.clone())?;
    }
    r.finish()
}

/// Sum over consecutive rescaled samples of `Δs ‖Δρ_v/Δs‖²_{X*}` and the
/// drop `K(v(s₀)) − K(v(s_end))` that bounds it.
pub fn dual_dissipation_budget(form: &NonlocalForm, resc: &RescaledTrajectory) -> (f64, f64) {
    let q = resc.params.q;
    let mut sum = 0.0;
    for p in resc.samples.windows(2) {
        let ds = p[1].s - p[0].s;
        let a = density_functional(form, q, p[0].v.values());
        let b = density_functional(form, q, p[1].v.values());
        let d: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        sum += dot(&d, &form.stiffness_solve(&d)) / ds;
    }
    let drop = match (resc.samples.first(), resc.samples.last()) {
        (Some(f), Some(l)) => f.k - l.k,
        _ => 0.0,
    };
    (sum, drop)
}

/// `J(v(s))` and `K(v(s))` nonincreasing between consecutive samples, with
/// slack `RESCALED_SLACK · scale`. Warning level: sampling a discrete flow
/// at nearest records is only approximately monotone.
pub fn rescaled_monotonicity(resc: &RescaledTrajectory, scale: f64) -> InequalityLedger {
    let slack = RESCALED_SLACK * scale.abs();
    let mut ledger = InequalityLedger::default();
    for p in resc.samples.windows(2) {
        let (a, b) = (&p[0], &p[1]);
        ledger.push(b.step, b.t, CheckOutcome::new("rescaled_j", b.j, a.j, slack, Severity::Warning));
        ledger.push(b.step, b.t, CheckOutcome::new("rescaled_k", b.k, a.k, slack, Severity::Warning));
    }
    ledger
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryProfile {
    pub phi: SpatialField,
    /// `‖ψ‖²_X` for the minimizer `ψ` on the unit `L^q` sphere.
    pub mu: f64,
    /// `φ = scale_c ψ`.
    pub scale_c: f64,
    /// [`stationary_residual`] of `φ`.
    pub residual: f64,
    pub iterations: usize,
}

/// Nonnegative solution of `(−Δ)^θ φ = λ_q |φ|^{q−2}φ` by constrained energy
/// minimization from `|init|`, rescaled onto the equation.
pub fn solve_stationary(
    form: &NonlocalForm,
    params: &FlowParams,
    init: &SpatialField,
    tol: f64,
) -> Result<StationaryProfile> {
    check_len(form.n(), init.len())?;
    let lambda = params.lambda_or("stationary profile")?;
    let q = params.q;
    let mut start = init.clone();
    let mut psi_tol = tol;
    let mut iterations = 0;
    // The residual of φ is c times that of ψ, and c is known only afterwards.
    for _ in 0..8 {
        let g = ground_state(form, q, &start, psi_tol)?;
        iterations += g.iterations;
        let c = (g.mu / lambda).powf(1.0 / (q - 2.0));
        let phi = g.psi.scaled(c);
        let residual = stationary_residual(form, params, &phi)?;
        if residual < tol {
            return Ok(StationaryProfile {
                phi,
                mu: g.mu,
                scale_c: c,
                residual,
                iterations,
            });
        }
        psi_tol = 0.5 * tol / c;
        start = g.psi;
    }
    Err(Error::NonConvergence {
        what: "stationary profile",
        iterations,
        residual: psi_tol,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileConvergence {
    pub s: Vec<f64>,
    /// `‖v(s) − φ‖_X`.
    pub distance: Vec<f64>,
    /// `J(v(s)) − J(φ)`.
    pub j_gap: Vec<f64>,
    pub final_s: f64,
    pub final_distance: f64,
    /// Distance nonincreasing over the second half of the samples.
    pub eventually_monotone: bool,
    pub final_stationary_residual: f64,
}

pub fn profile_convergence(
    form: &NonlocalForm,
    resc: &RescaledTrajectory,
    profile: &StationaryProfile,
) -> Result<ProfileConvergence> {
    check_len(form.n(), profile.phi.len())?;
    let params = &resc.params;
    let j_phi = J_functional(form, params, &profile.phi)?;
    let mut s = Vec::with_capacity(resc.samples.len());
    let mut distance = Vec::with_capacity(resc.samples.len());
    let mut j_gap = Vec::with_capacity(resc.samples.len());
    for smp in &resc.samples {
        check_len(form.n(), smp.v.len())?;
        let d = smp.v.sub(&profile.phi);
        s.push(smp.s);
        distance.push(form.bilinear(d.values(), d.values()).max(0.0).sqrt());
        j_gap.push(smp.j - j_phi);
    }
    let half = distance.len() / 2;
    let eventually_monotone = distance[half..]
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let final_stationary_residual = match resc.samples.last() {
        Some(l) => stationary_residual(form, params, &l.v)?,
        None => f64::NAN,
    };
    Ok(ProfileConvergence {
        final_s: s.last().copied().unwrap_or(f64::NAN),
        final_distance: distance.last().copied().unwrap_or(f64::NAN),
        s,
        distance,
        j_gap,
        eventually_monotone,
        final_stationary_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{build_form, Domain1D};
    use std::f64::consts::PI;

    #[test]
    fn synthetic_extinction_is_recovered() {
        let q = 3.5;
        let ts = 0.37;
        let samples: Vec<(f64, f64)> = (0..=400)
            .map(|i| {
                let t = i as f64 * 1e-3;
                (t, 2.0 * (ts - t).max(0.0).powf(1.0 / (q - 2.0)))
            })
            .collect();
        let fit = fit_extinction_samples(q, &samples, 1e-8).unwrap();
        assert!((fit.t_star - ts).abs() < 1e-6);
        assert!(fit.r_squared > 0.999_999);
    }

    #[test]
    fn rescaled_time_identities() {
        let p = FlowParams::new(3.0, 1.0).unwrap();
        let sc = Scaling::new(&p, Some(2.0)).unwrap();
        let t = 2.0 * (1.0 - (-1.0f64).exp());
        assert!((sc.s_of(t).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(sc.s_of(0.0), Some(0.0));
        assert!(sc.s_of(2.0).is_none());
        assert!(Scaling::new(&p, None).is_err());
        let p = FlowParams::new(1.5, 1.0).unwrap();
        let sc = Scaling::new(&p, None).unwrap();
        assert_eq!(sc.factor(0.0), 1.0);
    }

    #[test]
    fn functionals_vanish_at_zero_and_reject_linear_case() {
        let d = Domain1D::new(0.0, 1.0, 10).unwrap();
        let f = build_form(&d, 0.5).unwrap();
        let p = FlowParams::new(3.0, 0.5).unwrap();
        let z = SpatialField::zeros(10);
        assert_eq!(J_functional(&f, &p, &z).unwrap(), 0.0);
        assert_eq!(K_functional(&f, &p, &z).unwrap(), 0.0);
        let lin = FlowParams::new(2.0, 0.5).unwrap();
        assert!(J_functional(&f, &lin, &z).is_err());
        assert!(K_functional(&f, &lin, &z).is_err());
    }

    #[test]
    fn profile_satisfies_scaling_identity() {
        let d = Domain1D::new(0.0, 1.0, 100).unwrap();
        let f = build_form(&d, 1.0).unwrap();
        for q in [1.5, 3.0] {
            let p = FlowParams::new(q, 1.0).unwrap();
            let init = SpatialField::from_fn(&d, |x| (PI * x).sin());
            let prof = solve_stationary(&f, &p, &init, 1e-9).unwrap();
            assert!(prof.residual < 1e-9);
            let lam = p.lambda_q.unwrap();
            let lhs = lam * lp_norm_pow(f.mass(), prof.phi.values(), q);
            let rhs = f.bilinear(prof.phi.values(), prof.phi.values());
            assert!((lhs - rhs).abs() < 1e-6 * rhs);
            let j = J_functional(&f, &p, &prof.phi).unwrap();
            assert!((j - (0.5 - 1.0 / q) * rhs).abs() < 1e-6 * rhs);
        }
    }
}
