//! Implicit time stepping by minimizing movement.
//!
//! Each step solves `M(|u|^{q−2}u − ρ_prev) + τ S u = 0`, the Euler–Lagrange
//! equation of the strictly convex functional
//!
//! ```text
//! Φ(w) = Σ m_i (|w_i|^q / q − ρ_prev,i w_i) + (τ/2) wᵀ S w
//! ```
//!
//! (τ times the step functional `I_n`). Newton's method is globalized by
//! Armijo backtracking on `Φ`. For `q ≥ 2` the unknown is `u`; for `q < 2` it
//! is `ρ`, with `u = |ρ|^{m−1}ρ`, so the differentiated nonlinearity never
//! has a negative exponent.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result, StepFailure};
use crate::linalg::{dot, signed_pow};
use crate::operator::{lp_norm_pow, Domain1D, FlowParams, NonlocalForm, SpatialField};

/// Which variable Newton iterates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableChoice {
    /// `u` when `q ≥ 2`, `ρ` otherwise.
    #[default]
    Auto,
    SolveInU,
    SolveInRho,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub tau: f64,
    /// Bound on the Newton residual in the discrete dual norm.
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Diagonal shift used only when a Jacobian fails to factor.
    pub eps_reg: f64,
    pub variable_choice: VariableChoice,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            newton_tol: 1e-11,
            newton_max: 50,
            eps_reg: 0.0,
            variable_choice: VariableChoice::Auto,
        }
    }
}

impl StepperConfig {
    pub fn with_tau(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "newton_tol must be positive, got {}",
                self.newton_tol
            )));
        }
        if self.newton_max == 0 {
            return Err(Error::Parameter("newton_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Default extinction threshold in `‖·‖_q`.
pub const DEFAULT_EXT_TOL: f64 = 1e-8;

/// Result of one implicit step.
#[derive(Debug, Clone)]
pub struct StepSolution {
    pub u: SpatialField,
    pub iterations: usize,
    /// Final residual in the discrete dual norm.
    pub residual: f64,
    /// `Φ` at the start and after every accepted Newton update.
    pub merit: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unknown {
    U,
    Rho,
}

fn resolve_unknown(params: &FlowParams, choice: VariableChoice) -> Unknown {
    match choice {
        VariableChoice::SolveInU => Unknown::U,
        VariableChoice::SolveInRho => Unknown::Rho,
        VariableChoice::Auto if params.q >= 2.0 => Unknown::U,
        VariableChoice::Auto => Unknown::Rho,
    }
}

/// `|u|^{q−2}u`, nodewise.
pub fn density(params: &FlowParams, u: &SpatialField) -> SpatialField {
    u.map(|v| signed_pow(v, params.q - 1.0))
}

/// `|u|^{(q−2)/2}u`, nodewise.
pub fn half_power(params: &FlowParams, u: &SpatialField) -> SpatialField {
    u.map(|v| signed_pow(v, params.q / 2.0))
}

struct StepProblem<'a> {
    form: &'a NonlocalForm,
    q: f64,
    tau: f64,
    rho_prev: &'a [f64],
}

impl StepProblem<'_> {
    fn merit(&self, u: &[f64]) -> f64 {
        let h = self.form.mass();
        let local: f64 = u
            .iter()
            .zip(self.rho_prev)
            .zip(h)
            .map(|((&w, &r), &m)| m * (w.abs().powf(self.q) / self.q - r * w))
            .sum();
        local + 0.5 * self.tau * self.form.bilinear(u, u)
    }

    /// Gradient of `Φ` in `u`, which is also the residual of the step equation.
    fn residual(&self, u: &[f64], rho: &[f64]) -> Vec<f64> {
        let su = self.form.stiffness_apply(u);
        su.iter()
            .zip(rho.iter().zip(self.rho_prev))
            .zip(self.form.mass())
            .map(|((s, (r, rp)), m)| m * (r - rp) + self.tau * s)
            .collect()
    }
}

/// One step of the minimizing-movement scheme.
pub fn implicit_step(
    form: &NonlocalForm,
    params: &FlowParams,
    u_prev: &SpatialField,
    tau: f64,
    cfg: &StepperConfig,
) -> Result<StepSolution> {
    check_len(form.n(), u_prev.len())?;
    StepperConfig { tau, ..*cfg }.validate()?;
    if u_prev.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite previous state".into()));
    }
    let rho_prev = density(params, u_prev);
    let problem = StepProblem {
        form,
        q: params.q,
        tau,
        rho_prev: rho_prev.values(),
    };
    if u_prev.is_zero() {
        return Ok(StepSolution {
            u: SpatialField::zeros(form.n()),
            iterations: 0,
            residual: 0.0,
            merit: vec![0.0],
        });
    }
    // Absolute bound from the configuration, tightened for small data so a
    // nearly extinct state is still resolved to full relative accuracy.
    let data_scale = {
        let f: Vec<f64> = rho_prev
            .values()
            .iter()
            .zip(form.mass())
            .map(|(r, m)| r * m)
            .collect();
        form.functional_dual_norm(&f)
    };
    let tol = cfg.newton_tol * data_scale.min(1.0);
    match resolve_unknown(params, cfg.variable_choice) {
        Unknown::U => newton_in_u(&problem, params, u_prev, tol, cfg),
        Unknown::Rho => newton_in_rho(&problem, params, &rho_prev, tol, cfg),
    }
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn newton_in_u(
    p: &StepProblem<'_>,
    params: &FlowParams,
    u_prev: &SpatialField,
    tol: f64,
    cfg: &StepperConfig,
) -> Result<StepSolution> {
    let q = params.q;
    let mass = p.form.mass();
    let mut u = u_prev.values().to_vec();
    let mut phi = p.merit(&u);
    let mut merit = vec![phi];
    let rho_of = |u: &[f64]| -> Vec<f64> { u.iter().map(|&v| signed_pow(v, q - 1.0)).collect() };
    let mut grad = p.residual(&u, &rho_of(&u));
    let mut res = p.form.functional_dual_norm(&grad);

    for it in 0..cfg.newton_max {
        if res <= tol {
            return finish(u, it, res, merit);
        }
        let diag: Vec<f64> = u
            .iter()
            .zip(mass)
            .map(|(&v, &m)| {
                if q == 2.0 {
                    m
                } else {
                    m * (q - 1.0) * v.abs().powf(q - 2.0)
                }
            })
            .collect();
        let factor = match p.form.factor_congruent(&diag, p.tau, None) {
            Some(f) => f,
            None => {
                let eps = if cfg.eps_reg > 0.0 { cfg.eps_reg } else { 1e-14 };
                let reg: Vec<f64> = diag.iter().map(|d| d + eps).collect();
                p.form.factor_congruent(&reg, p.tau, None).ok_or_else(|| {
                    Error::SingularOperator("Newton Jacobian in u".into())
                })?
            }
        };
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let dir = factor.solve(&neg);
        let slope = dot(&grad, &dir);
        let (next, next_phi) = backtrack(p, &u, &dir, phi, slope, |c| c.to_vec())
            .ok_or_else(|| step_failure(&u, res, it, "line search stalled"))?;
        u = next;
        phi = next_phi;
        merit.push(phi);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("NaN in Newton iterate".into()));
        }
        grad = p.residual(&u, &rho_of(&u));
        res = p.form.functional_dual_norm(&grad);
    }
    if res <= tol {
        return finish(u, cfg.newton_max, res, merit);
    }
    Err(step_failure(&u, res, cfg.newton_max, "Newton iteration cap reached"))
}

fn newton_in_rho(
    p: &StepProblem<'_>,
    params: &FlowParams,
    rho_prev: &SpatialField,
    tol: f64,
    cfg: &StepperConfig,
) -> Result<StepSolution> {
    let m_exp = params.m;
    let mass = p.form.mass();
    let u_of = |rho: &[f64]| -> Vec<f64> { rho.iter().map(|&r| signed_pow(r, m_exp)).collect() };
    let mut rho = rho_prev.values().to_vec();
    let mut u = u_of(&rho);
    let mut phi = p.merit(&u);
    let mut merit = vec![phi];
    let mut grad = p.residual(&u, &rho);
    let mut res = p.form.functional_dual_norm(&grad);

    for it in 0..cfg.newton_max {
        if res <= tol {
            return finish(u, it, res, merit);
        }
        // (M + τ S D) δ = −F with D = diag(m|ρ|^{m−1}), solved through the
        // symmetric system (I + (τ/h) D^½ S D^½) z = D^½ (−F)/h,
        // δ = (−F − τ S D^½ z)/h. The lumped mass is the constant h.
        let h = mass[0];
        let sqrt_d: Vec<f64> = rho
            .iter()
            .map(|&r| (m_exp * r.abs().powf(m_exp - 1.0)).sqrt())
            .collect();
        let ones = vec![1.0; rho.len()];
        let factor = p
            .form
            .factor_congruent(&ones, p.tau / h, Some(&sqrt_d))
            .ok_or_else(|| Error::SingularOperator("Newton Jacobian in rho".into()))?;
        let rhs: Vec<f64> = grad.iter().zip(&sqrt_d).map(|(g, s)| -s * g / h).collect();
        let z = factor.solve(&rhs);
        let sdz: Vec<f64> = z.iter().zip(&sqrt_d).map(|(z, s)| z * s).collect();
        let ssdz = p.form.stiffness_apply(&sdz);
        let dir: Vec<f64> = grad
            .iter()
            .zip(&ssdz)
            .map(|(g, s)| (-g - p.tau * s) / h)
            .collect();
        // Directional derivative of Φ(u(ρ)) is F · D δ.
        let slope: f64 = grad
            .iter()
            .zip(dir.iter().zip(&sqrt_d))
            .map(|(g, (d, s))| g * d * s * s)
            .sum();
        let (next_rho, next_phi) = backtrack(p, &rho, &dir, phi, slope, u_of)
            .ok_or_else(|| step_failure(&u, res, it, "line search stalled"))?;
        rho = next_rho;
        phi = next_phi;
        merit.push(phi);
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("NaN in Newton iterate".into()));
        }
        u = u_of(&rho);
        grad = p.residual(&u, &rho);
        res = p.form.functional_dual_norm(&grad);
    }
    if res <= tol {
        return finish(u, cfg.newton_max, res, merit);
    }
    Err(step_failure(&u, res, cfg.newton_max, "Newton iteration cap reached"))
}

/// Armijo backtracking along `dir` in the iteration variable `x`; `to_u`
/// maps the iteration variable to `u` for evaluating `Φ`.
fn backtrack(
    p: &StepProblem<'_>,
    x: &[f64],
    dir: &[f64],
    phi: f64,
    slope: f64,
    to_u: impl Fn(&[f64]) -> Vec<f64>,
) -> Option<(Vec<f64>, f64)> {
    // Φ differences below this are rounding noise.
    let noise = 16.0 * f64::EPSILON * phi.abs().max(f64::MIN_POSITIVE);
    let mut alpha = 1.0;
    for _ in 0..MAX_HALVINGS {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + alpha * d).collect();
        let trial_phi = p.merit(&to_u(&trial));
        if trial_phi <= phi + ARMIJO_C1 * alpha * slope + noise {
            return Some((trial, trial_phi));
        }
        alpha *= 0.5;
    }
    None
}

fn finish(u: Vec<f64>, iterations: usize, residual: f64, merit: Vec<f64>) -> Result<StepSolution> {
    Ok(StepSolution {
        u: SpatialField::new(u)?,
        iterations,
        residual,
        merit,
    })
}

fn step_failure(u: &[f64], residual: f64, iterations: usize, reason: &str) -> Error {
    Error::StepFailure(Box::new(StepFailure {
        last_iterate: SpatialField::new(u.to_vec()).unwrap_or_else(|_| SpatialField::zeros(u.len())),
        residual,
        iterations,
        reason: reason.to_string(),
    }))
}

/// Per-step state and the energies derived from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub u: SpatialField,
    /// `|u|^{q−2}u`.
    pub rho: SpatialField,
    /// `|u|^{(q−2)/2}u`.
    pub w: SpatialField,
    /// `‖u‖_q^q`.
    pub e_lq: f64,
    /// `‖u‖²_X`.
    pub e_x: f64,
    /// `‖ρ‖²_{X*}`.
    pub e_dual: f64,
    /// `‖u‖²_X / ‖u‖²_q`, absent for the zero field.
    pub rayleigh: Option<f64>,
    pub newton_iters: usize,
    pub residual: f64,
}

impl StepRecord {
    pub fn new(
        form: &NonlocalForm,
        params: &FlowParams,
        step: usize,
        t: f64,
        u: SpatialField,
        newton_iters: usize,
        residual: f64,
    ) -> Self {
        let rho = density(params, &u);
        let w = half_power(params, &u);
        let e_lq = lp_norm_pow(form.mass(), u.values(), params.q);
        let e_x = form.bilinear(u.values(), u.values()).max(0.0);
        let f: Vec<f64> = rho
            .values()
            .iter()
            .zip(form.mass())
            .map(|(r, m)| r * m)
            .collect();
        let e_dual = dot(&f, &form.stiffness_solve(&f)).max(0.0);
        let rayleigh = if e_lq > 0.0 {
            Some(e_x / e_lq.powf(2.0 / params.q))
        } else {
            None
        };
        Self {
            step,
            t,
            u,
            rho,
            w,
            e_lq,
            e_x,
            e_dual,
            rayleigh,
            newton_iters,
            residual,
        }
    }

    /// `‖u‖_q`.
    pub fn lq_norm(&self, q: f64) -> f64 {
        self.e_lq.powf(1.0 / q)
    }
}

/// A full run of the scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub domain: Domain1D,
    pub params: FlowParams,
    pub config: StepperConfig,
    pub ext_tol: f64,
    pub records: Vec<StepRecord>,
    /// Time of the first record with `‖u‖_q < ext_tol`.
    pub extinct_at: Option<f64>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn lq_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lq_norm(self.params.q)).collect()
    }

    pub fn initial(&self) -> &StepRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("trajectory holds the initial record")
    }
}

/// Streaming evolution: yields the initial record and then one record per
/// step until `t_end` or extinction.
pub struct Evolution<'a> {
    form: &'a NonlocalForm,
    params: FlowParams,
    cfg: StepperConfig,
    t_end: f64,
    ext_tol: f64,
    state: Option<SpatialField>,
    step: usize,
    done: bool,
}

impl<'a> Evolution<'a> {
    pub fn new(
        form: &'a NonlocalForm,
        params: &FlowParams,
        u0: &SpatialField,
        cfg: &StepperConfig,
        t_end: f64,
        ext_tol: f64,
    ) -> Result<Self> {
        check_len(form.n(), u0.len())?;
        cfg.validate()?;
        if !(t_end > 0.0) {
            return Err(Error::Parameter(format!("t_end must be positive, got {t_end}")));
        }
        if !(ext_tol >= 0.0) {
            return Err(Error::Parameter(format!("ext_tol must be nonnegative, got {ext_tol}")));
        }
        Ok(Self {
            form,
            params: *params,
            cfg: *cfg,
            t_end,
            ext_tol,
            state: Some(u0.clone()),
            step: 0,
            done: false,
        })
    }

    fn time(&self, step: usize) -> f64 {
        step as f64 * self.cfg.tau
    }
}

impl Iterator for Evolution<'_> {
    type Item = Result<StepRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let prev = self.state.take()?;
        let (u, iters, res) = if self.step == 0 {
            (prev, 0, 0.0)
        } else {
            match implicit_step(self.form, &self.params, &prev, self.cfg.tau, &self.cfg) {
                Ok(s) => (s.u, s.iterations, s.residual),
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        };
        let t = self.time(self.step);
        let rec = StepRecord::new(self.form, &self.params, self.step, t, u.clone(), iters, res);
        let extinct = rec.lq_norm(self.params.q) < self.ext_tol;
        // Stop once the next time would pass t_end (with slack for rounding).
        if extinct || self.time(self.step + 1) > self.t_end * (1.0 + 1e-12) {
            self.done = true;
        }
        self.step += 1;
        self.state = Some(u);
        Some(Ok(rec))
    }
}

/// Iterates [`implicit_step`] from `u0` until `t_end` or until `‖u‖_q` falls
/// below `ext_tol`.
pub fn run_evolution(
    form: &NonlocalForm,
    params: &FlowParams,
    u0: &SpatialField,
    cfg: &StepperConfig,
    t_end: f64,
    ext_tol: f64,
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        domain: *form.domain(),
        params: *params,
        config: *cfg,
        ext_tol,
        records: Vec::new(),
        extinct_at: None,
    };
    for rec in Evolution::new(form, params, u0, cfg, t_end, ext_tol)? {
        match rec {
            Ok(r) => {
                if traj.extinct_at.is_none() && r.lq_norm(params.q) < ext_tol {
                    traj.extinct_at = Some(r.t);
                }
                traj.records.push(r);
            }
            Err(e) => {
                let t = traj.records.last().map_or(0.0, |r| r.t + cfg.tau);
                return Err(Error::EvolutionFailed {
                    t,
                    partial: Box::new(traj),
                    source: Box::new(e),
                });
            }
        }
    }
    Ok(traj)
}

/// Advances two states with the same step so that contraction and comparison
/// can be checked step by step.
pub fn step_pair_coupled(
    form: &NonlocalForm,
    params: &FlowParams,
    ua_prev: &SpatialField,
    ub_prev: &SpatialField,
    tau: f64,
    cfg: &StepperConfig,
) -> Result<(StepSolution, StepSolution)> {
    let (a, b) = rayon::join(
        || implicit_step(form, params, ua_prev, tau, cfg),
        || implicit_step(form, params, ub_prev, tau, cfg),
    );
    Ok((a?, b?))
}

/// Runs two trajectories in lockstep with [`step_pair_coupled`]. Both stop at
/// `t_end`; extinction of one does not stop the other.
pub fn run_pair(
    form: &NonlocalForm,
    params: &FlowParams,
    ua0: &SpatialField,
    ub0: &SpatialField,
    cfg: &StepperConfig,
    t_end: f64,
    ext_tol: f64,
) -> Result<(Trajectory, Trajectory)> {
    check_len(form.n(), ua0.len())?;
    check_len(form.n(), ub0.len())?;
    cfg.validate()?;
    let blank = || Trajectory {
        domain: *form.domain(),
        params: *params,
        config: *cfg,
        ext_tol,
        records: Vec::new(),
        extinct_at: None,
    };
    let (mut ta, mut tb) = (blank(), blank());
    let push = |traj: &mut Trajectory, rec: StepRecord| {
        if traj.extinct_at.is_none() && rec.lq_norm(params.q) < ext_tol {
            traj.extinct_at = Some(rec.t);
        }
        traj.records.push(rec);
    };
    push(&mut ta, StepRecord::new(form, params, 0, 0.0, ua0.clone(), 0, 0.0));
    push(&mut tb, StepRecord::new(form, params, 0, 0.0, ub0.clone(), 0, 0.0));
    let mut step = 1;
    while step as f64 * cfg.tau <= t_end * (1.0 + 1e-12) {
        let t = step as f64 * cfg.tau;
        let (a, b) = step_pair_coupled(form, params, &ta.last().u, &tb.last().u, cfg.tau, cfg)
            .map_err(|e| Error::EvolutionFailed {
                t,
                partial: Box::new(ta.clone()),
                source: Box::new(e),
            })?;
        push(&mut ta, StepRecord::new(form, params, step, t, a.u, a.iterations, a.residual));
        push(&mut tb, StepRecord::new(form, params, step, t, b.u, b.iterations, b.residual));
        step += 1;
    }
    Ok((ta, tb))
}
