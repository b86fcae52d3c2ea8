//! Checks of the discrete energy inequalities, Rayleigh monotonicity, decay
//! envelopes, contraction, comparison and the Bénilan–Crandall bounds.
//!
//! Every per-step inequality is written as `lhs ≤ rhs + slack`. For the
//! dissipation inequalities the exact minimizer satisfies `lhs ≤ rhs`; a
//! Newton residual `r` perturbs the tested identity by at most
//! `‖r‖_{X*} ‖test‖_X`, so the slack is `10 · newton_tol · ‖test‖_X` plus a
//! rounding floor.

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::ground::ground_state;
use crate::linalg::signed_pow;
use crate::operator::{lp_norm_pow, principal_eigenpair, FlowParams, NonlocalForm, SpatialField};
use crate::stepper::{StepRecord, StepperConfig, Trajectory};

/// Relative tolerance for the Bénilan–Crandall diagnostics.
pub const TOL_BC: f64 = 0.1;
/// Steps skipped before the Bénilan–Crandall diagnostics start.
pub const BC_BURN_IN: usize = 10;
/// Exponents α of the `L^α` dissipation checks.
pub const ALPHAS: [f64; 3] = [1.5, 2.0, 4.0];
/// Relative slack on decay envelopes that depend on the Sobolev constant.
pub const ENVELOPE_SLACK: f64 = 0.05;

const SLACK_FACTOR: f64 = 10.0;
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Exact for the discrete scheme; a violation means a solver bug.
    Fatal,
    /// Proven only in the continuum; reported but not fatal.
    Warning,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub severity: Severity,
}

impl CheckOutcome {
    pub(crate) fn new(check: impl Into<String>, lhs: f64, rhs: f64, slack: f64, severity: Severity) -> Self {
        Self {
            check: check.into(),
            lhs,
            rhs,
            slack,
            severity,
        }
    }

    pub fn passed(&self) -> bool {
        self.lhs <= self.rhs + self.slack
    }

    /// `lhs − rhs`, positive when the unrelaxed inequality fails.
    pub fn excess(&self) -> f64 {
        self.lhs - self.rhs
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerRow {
    pub step: usize,
    pub t: f64,
    pub outcomes: Vec<CheckOutcome>,
}

/// Per-step outcomes of all checks run on a trajectory.
#[derive(Debug, Clone, Default, Serialize)]
pub struct InequalityLedger {
    pub rows: Vec<LedgerRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckTotals {
    pub check: String,
    pub severity: Severity,
    pub checked: usize,
    pub violations: usize,
    /// Largest `(lhs − rhs − slack)` over the run, or the closest approach.
    pub worst_margin: f64,
}

impl InequalityLedger {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub(crate) fn push(&mut self, step: usize, t: f64, outcome: CheckOutcome) {
        match self.rows.last_mut() {
            Some(row) if row.step == step => row.outcomes.push(outcome),
            _ => self.rows.push(LedgerRow {
                step,
                t,
                outcomes: vec![outcome],
            }),
        }
    }

    /// Combines two ledgers, joining rows of the same step.
    pub fn merge(mut self, other: InequalityLedger) -> Self {
        for row in other.rows {
            match self.rows.binary_search_by_key(&row.step, |r| r.step) {
                Ok(i) => self.rows[i].outcomes.extend(row.outcomes),
                Err(i) => self.rows.insert(i, row),
            }
        }
        self
    }

    pub fn outcomes(&self) -> impl Iterator<Item = (&LedgerRow, &CheckOutcome)> {
        self.rows
            .iter()
            .flat_map(|r| r.outcomes.iter().map(move |o| (r, o)))
    }

    pub fn violations(&self, severity: Severity) -> usize {
        self.outcomes()
            .filter(|(_, o)| o.severity == severity && !o.passed())
            .count()
    }

    pub fn fatal_violations(&self) -> usize {
        self.violations(Severity::Fatal)
    }

    pub fn warnings(&self) -> usize {
        self.violations(Severity::Warning)
    }

    /// Totals per check name, in order of first appearance.
    pub fn totals(&self) -> Vec<CheckTotals> {
        let mut out: Vec<CheckTotals> = Vec::new();
        for (_, o) in self.outcomes() {
            let margin = o.lhs - o.rhs - o.slack;
            let entry = match out.iter_mut().position(|t| t.check == o.check) {
                Some(i) => &mut out[i],
                None => {
                    out.push(CheckTotals {
                        check: o.check.clone(),
                        severity: o.severity,
                        checked: 0,
                        violations: 0,
                        worst_margin: f64::NEG_INFINITY,
                    });
                    out.last_mut().unwrap()
                }
            };
            entry.checked += 1;
            if !o.passed() {
                entry.violations += 1;
            }
            entry.worst_margin = entry.worst_margin.max(margin);
        }
        out
    }

    pub fn count(&self, check: &str) -> (usize, usize) {
        self.totals()
            .into_iter()
            .find(|t| t.check == check)
            .map_or((0, 0), |t| (t.checked, t.violations))
    }
}

fn rounding(a: f64, b: f64) -> f64 {
    ROUNDING * a.abs().max(b.abs())
}

fn x_norm(form: &NonlocalForm, v: &[f64]) -> f64 {
    form.bilinear(v, v).max(0.0).sqrt()
}

fn mass_functional(form: &NonlocalForm, v: &[f64]) -> Vec<f64> {
    v.iter().zip(form.mass()).map(|(v, m)| v * m).collect()
}

/// `‖u‖²_X / ‖u‖²_q`.
pub fn rayleigh(form: &NonlocalForm, params: &FlowParams, u: &SpatialField) -> Result<f64> {
    check_len(form.n(), u.len())?;
    if u.is_zero() {
        return Err(Error::UndefinedQuotient);
    }
    let num = form.bilinear(u.values(), u.values());
    let den = lp_norm_pow(form.mass(), u.values(), params.q).powf(2.0 / params.q);
    Ok(num / den)
}

/// Flags steps where the Rayleigh quotient increases. Stops at the first
/// zero state.
pub fn check_rayleigh_monotone(traj: &Trajectory) -> InequalityLedger {
    let mut ledger = InequalityLedger::default();
    for pair in traj.records.windows(2) {
        if !push_rayleigh(&mut ledger, traj.config.newton_tol, &pair[0], &pair[1]) {
            break;
        }
    }
    ledger
}

fn push_rayleigh(ledger: &mut InequalityLedger, tol: f64, a: &StepRecord, b: &StepRecord) -> bool {
    let (Some(r0), Some(r1)) = (a.rayleigh, b.rayleigh) else {
        return false;
    };
    let slack = SLACK_FACTOR * tol * r0 + rounding(r0, r1);
    ledger.push(b.step, b.t, CheckOutcome::new("rayleigh", r1, r0, slack, Severity::Fatal));
    true
}

/// Per-step discrete dissipation inequalities: `L^q`, `X`-energy, `L²` of
/// `ρ` and `L^α` of `ρ` for each α in [`ALPHAS`].
pub fn dissipation_checks(form: &NonlocalForm, traj: &Trajectory) -> Result<InequalityLedger> {
    check_len(form.n(), traj.domain.n)?;
    let mut ledger = InequalityLedger::default();
    for pair in traj.records.windows(2) {
        push_dissipation(&mut ledger, form, &traj.params, &traj.config, &pair[0], &pair[1]);
    }
    Ok(ledger)
}

fn push_dissipation(
    ledger: &mut InequalityLedger,
    form: &NonlocalForm,
    p: &FlowParams,
    config: &StepperConfig,
    a: &StepRecord,
    b: &StepRecord,
) {
    let q = p.q;
    let tau = config.tau;
    let slack_tol = SLACK_FACTOR * config.newton_tol;
    let mass = form.mass();
    let c_q = 4.0 / (q * p.q_conj);
    let (step, t) = (b.step, b.t);
    let u1 = b.u.values();
    let u0 = a.u.values();

    let lhs = b.e_lq / p.q_conj + tau * b.e_x;
    let rhs = a.e_lq / p.q_conj;
    let slack = slack_tol * b.e_x.sqrt() + rounding(lhs, rhs);
    ledger.push(step, t, CheckOutcome::new("lq_dissipation", lhs, rhs, slack, Severity::Fatal));

    let dw: Vec<f64> = b.w.values().iter().zip(a.w.values()).map(|(x, y)| x - y).collect();
    let du: Vec<f64> = u1.iter().zip(u0).map(|(x, y)| x - y).collect();
    let lhs = c_q * dot_mass(mass, &dw, &dw) / tau + 0.5 * b.e_x;
    let rhs = 0.5 * a.e_x;
    let slack = slack_tol * x_norm(form, &du) / tau + rounding(lhs, rhs);
    ledger.push(step, t, CheckOutcome::new("x_energy_dissipation", lhs, rhs, slack, Severity::Fatal));

    let w_x2 = form.bilinear(b.w.values(), b.w.values());
    let lhs = 0.5 * dot_mass(mass, b.rho.values(), b.rho.values()) + c_q * tau * w_x2;
    let rhs = 0.5 * dot_mass(mass, a.rho.values(), a.rho.values());
    let slack = slack_tol * x_norm(form, b.rho.values()) + rounding(lhs, rhs);
    ledger.push(step, t, CheckOutcome::new("rho_l2_dissipation", lhs, rhs, slack, Severity::Fatal));

    for alpha in ALPHAS {
        let beta = (q - 1.0) * (alpha - 1.0) + 1.0;
        let beta_conj = beta / (beta - 1.0);
        let half: Vec<f64> = u1.iter().map(|&v| signed_pow(v, beta / 2.0)).collect();
        let test: Vec<f64> = u1.iter().map(|&v| signed_pow(v, beta - 1.0)).collect();
        let lhs = lp_norm_pow(mass, b.rho.values(), alpha) / alpha
            + 4.0 / (beta * beta_conj) * tau * form.bilinear(&half, &half);
        let rhs = lp_norm_pow(mass, a.rho.values(), alpha) / alpha;
        let slack = slack_tol * x_norm(form, &test) + rounding(lhs, rhs);
        ledger.push(
            step,
            t,
            CheckOutcome::new(format!("l_alpha_dissipation_{alpha}"), lhs, rhs, slack, Severity::Fatal),
        );
    }
}

fn dot_mass(mass: &[f64], a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(mass).map(|((a, b), m)| m * a * b).sum()
}

/// Per-step defect of the discrete energy identity
/// `(1/q′)(‖u_{n+1}‖_q^q − ‖u_n‖_q^q)/τ + ‖u_{n+1}‖²_X`, which is `≤ 0` and
/// tends to zero with τ.
pub fn energy_identity_defects(traj: &Trajectory) -> Vec<f64> {
    let tau = traj.config.tau;
    let qc = traj.params.q_conj;
    traj.records
        .windows(2)
        .map(|p| (p[1].e_lq - p[0].e_lq) / (qc * tau) + p[1].e_x)
        .collect()
}

/// Per-step defect of `½‖ρ_{n+1}‖²_{X*} − ½‖ρ_n‖²_{X*} + τ‖u_{n+1}‖_q^q`,
/// which is `O(τ²)`.
pub fn dual_identity_defects(traj: &Trajectory) -> Vec<f64> {
    let tau = traj.config.tau;
    traj.records
        .windows(2)
        .map(|p| 0.5 * (p[1].e_dual - p[0].e_dual) + tau * p[1].e_lq)
        .collect()
}

/// Discrete best constant of `‖w‖_q ≤ C ‖w‖_X`, from the ground state
/// started at the principal eigenfield.
pub fn best_sobolev_constant(form: &NonlocalForm, params: &FlowParams) -> Result<f64> {
    Ok(sobolev_maximizer(form, params)?.0)
}

/// The constant and the field that attains it, normalized to `‖w‖_q = 1`.
pub fn sobolev_maximizer(form: &NonlocalForm, params: &FlowParams) -> Result<(f64, SpatialField)> {
    let e = principal_eigenpair(form)?;
    let g = ground_state(form, params.q, &e.vector, 1e-10 * (e.value).sqrt())?;
    Ok((1.0 / g.mu.sqrt(), g.psi))
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeSample {
    pub t: f64,
    pub norm: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub samples: Vec<EnvelopeSample>,
    pub violations: usize,
    pub max_relative_violation: f64,
    pub c_q: f64,
    pub rayleigh0: f64,
}

/// Samples `‖u(t)‖_q` against the decay envelopes.
///
/// For `1 < q < 2` the lower envelope uses `R(u₀)` and the upper one uses
/// `C_q`. For `q > 2` the upper envelope is the smaller of the `C_q` bound and
/// the `R(u₀)` extinction bound anchored at the recorded extinction time;
/// there is no lower envelope. The computed `C_q` is a lower bound of the
/// true constant, so envelopes use `C_q (1 + ENVELOPE_SLACK)`, which only
/// weakens them.
pub fn decay_envelopes(traj: &Trajectory, c_q: f64) -> Result<EnvelopeReport> {
    let p = &traj.params;
    let q = p.q;
    if p.is_linear() {
        return Err(Error::LinearCase("decay envelope"));
    }
    let first = traj.initial();
    let r0 = first.rayleigh.ok_or(Error::UndefinedQuotient)?;
    let n0 = first.lq_norm(q);
    let cm2 = (c_q * (1.0 + ENVELOPE_SLACK)).powi(-2);
    let k = (q - 2.0).abs() / (q - 1.0);
    let floor = traj.ext_tol;
    let mut samples = Vec::with_capacity(traj.records.len());
    let (mut violations, mut worst) = (0, 0.0f64);
    for rec in &traj.records {
        let t = rec.t;
        let norm = rec.lq_norm(q);
        let (lower, upper) = if t == 0.0 {
            (if q < 2.0 { Some(n0) } else { None }, n0)
        } else if q < 2.0 {
            let e = -1.0 / (2.0 - q);
            let base = n0.powf(-(2.0 - q));
            (Some((base + k * r0 * t).powf(e)), (base + k * cm2 * t).powf(e))
        } else {
            let e = 1.0 / (q - 2.0);
            let sob = (n0.powf(q - 2.0) - k * cm2 * t).max(0.0).powf(e);
            let ext = traj
                .extinct_at
                .map_or(f64::INFINITY, |ts| (k * r0 * (ts - t).max(0.0)).powf(e));
            (None, sob.min(ext))
        };
        let rounding = 1e-12 * n0;
        let mut bad = 0.0f64;
        if norm > upper + floor + rounding {
            bad = bad.max((norm - upper) / norm);
        }
        if let Some(lo) = lower {
            if norm < lo - rounding {
                bad = bad.max((lo - norm) / lo);
            }
        }
        if bad > 0.0 {
            violations += 1;
            worst = worst.max(bad);
        }
        samples.push(EnvelopeSample {
            t,
            norm,
            lower,
            upper: Some(upper),
        });
    }
    Ok(EnvelopeReport {
        samples,
        violations,
        max_relative_violation: worst,
        c_q,
        rayleigh0: r0,
    })
}

/// [`decay_envelopes`] as Warning-level ledger entries `envelope_upper` and
/// `envelope_lower`.
pub fn envelope_checks(traj: &Trajectory, c_q: f64) -> Result<InequalityLedger> {
    let report = decay_envelopes(traj, c_q)?;
    let rounding = 1e-12 * traj.initial().lq_norm(traj.params.q);
    let mut ledger = InequalityLedger::default();
    for (rec, smp) in traj.records.iter().zip(&report.samples) {
        if let Some(up) = smp.upper {
            ledger.push(
                rec.step,
                rec.t,
                CheckOutcome::new("envelope_upper", smp.norm, up, traj.ext_tol + rounding, Severity::Warning),
            );
        }
        if let Some(lo) = smp.lower {
            ledger.push(
                rec.step,
                rec.t,
                CheckOutcome::new("envelope_lower", lo, smp.norm, rounding, Severity::Warning),
            );
        }
    }
    Ok(ledger)
}

/// Bounds `[lower, upper]` on the extinction time for `q > 2`.
pub fn extinction_bounds(
    form: &NonlocalForm,
    params: &FlowParams,
    u0: &SpatialField,
) -> Result<(f64, f64)> {
    let c_q = best_sobolev_constant(form, params)?;
    extinction_bounds_with(form, params, u0, c_q)
}

/// [`extinction_bounds`] with a precomputed Sobolev constant.
pub fn extinction_bounds_with(
    form: &NonlocalForm,
    params: &FlowParams,
    u0: &SpatialField,
    c_q: f64,
) -> Result<(f64, f64)> {
    check_len(form.n(), u0.len())?;
    let q = params.q;
    if q <= 2.0 {
        return Err(Error::Parameter(format!(
            "extinction bounds need q > 2, got {q}"
        )));
    }
    if u0.is_zero() {
        return Ok((0.0, 0.0));
    }
    let k = (q - 1.0) / (q - 2.0);
    let nq = lp_norm_pow(form.mass(), u0.values(), q);
    let ex = form.bilinear(u0.values(), u0.values());
    let lower = k * nq / ex;
    let upper = k * c_q * c_q * nq.powf((q - 2.0) / q);
    Ok((lower, upper))
}

/// Least-squares slope of `log ‖u(t)‖_q` against `log t` over `[t0, t1]`.
pub fn decay_log_slope(traj: &Trajectory, t0: f64, t1: f64) -> Result<f64> {
    let q = traj.params.q;
    let pts: Vec<(f64, f64)> = traj
        .records
        .iter()
        .filter(|r| r.t >= t0 && r.t <= t1 && r.e_lq > 0.0)
        .map(|r| (r.t.ln(), r.lq_norm(q).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Parameter(format!(
            "fewer than two positive samples in [{t0}, {t1}]"
        )));
    }
    Ok(linear_fit(&pts).1)
}

/// Least-squares line `y = a + b x`; returns `(a, b, R²)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (a, b, r2)
}

fn check_compatible(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.domain != b.domain {
        return Err(Error::Mismatch("trajectories use different grids".into()));
    }
    if a.params != b.params {
        return Err(Error::Mismatch("trajectories use different q or theta".into()));
    }
    if a.config.tau != b.config.tau {
        return Err(Error::Mismatch("trajectories use different time steps".into()));
    }
    Ok(())
}

/// Stepwise `X*` and `L¹` contraction of `ρ_A − ρ_B`, and nodewise order
/// preservation when the initial data are ordered.
pub fn contraction_checks(
    form: &NonlocalForm,
    a: &Trajectory,
    b: &Trajectory,
) -> Result<InequalityLedger> {
    check_compatible(a, b)?;
    check_len(form.n(), a.domain.n)?;
    let tol = a.config.newton_tol.max(b.config.newton_tol);
    let mass = form.mass();
    let diff = |x: &StepRecord, y: &StepRecord| -> Vec<f64> {
        x.rho.values().iter().zip(y.rho.values()).map(|(p, q)| p - q).collect()
    };
    let dual = |d: &[f64]| form.functional_dual_norm(&mass_functional(form, d));
    let l1 = |d: &[f64]| d.iter().zip(mass).map(|(v, m)| m * v.abs()).sum::<f64>();

    let (a0, b0) = (a.initial(), b.initial());
    let order = if a0.rho.values().iter().zip(b0.rho.values()).all(|(x, y)| x <= y) {
        Some(1.0)
    } else if a0.rho.values().iter().zip(b0.rho.values()).all(|(x, y)| x >= y) {
        Some(-1.0)
    } else {
        None
    };

    let mut ledger = InequalityLedger::default();
    let steps = a.records.len().min(b.records.len());
    let mut prev = diff(a0, b0);
    let (mut prev_dual, mut prev_l1) = (dual(&prev), l1(&prev));
    for i in 1..steps {
        let (ra, rb) = (&a.records[i], &b.records[i]);
        let d = diff(ra, rb);
        let (nd, nl) = (dual(&d), l1(&d));
        let slack = SLACK_FACTOR * tol;
        ledger.push(
            ra.step,
            ra.t,
            CheckOutcome::new("dual_contraction", nd, prev_dual, slack + rounding(nd, prev_dual), Severity::Fatal),
        );
        ledger.push(
            ra.step,
            ra.t,
            CheckOutcome::new("l1_contraction", nl, prev_l1, slack + rounding(nl, prev_l1), Severity::Fatal),
        );
        if let Some(sign) = order {
            let worst = ra
                .u
                .values()
                .iter()
                .zip(rb.u.values())
                .map(|(x, y)| sign * (x - y))
                .fold(f64::NEG_INFINITY, f64::max);
            ledger.push(ra.step, ra.t, CheckOutcome::new("order", worst, 0.0, tol, Severity::Fatal));
        }
        prev = d;
        prev_dual = nd;
        prev_l1 = nl;
    }
    let _ = prev;
    Ok(ledger)
}

/// `2(q − 1)/|q − 2|`, the Bénilan–Crandall constant.
pub fn benilan_crandall_constant(params: &FlowParams) -> Result<f64> {
    if params.is_linear() {
        return Err(Error::LinearCase("Bénilan–Crandall constant"));
    }
    Ok(2.0 * (params.q - 1.0) / (params.q - 2.0).abs())
}

/// The time-derivative ratio `t‖Δρ/τ‖_{L¹}/‖ρ₀‖_{L¹}` against its bound and,
/// for nonnegative data, the one-sided pointwise bounds. Warning level.
pub fn benilan_crandall_check(form: &NonlocalForm, traj: &Trajectory) -> Result<InequalityLedger> {
    check_len(form.n(), traj.domain.n)?;
    let ctx = BcContext::new(form, &traj.params, traj.initial())?;
    let mut ledger = InequalityLedger::default();
    for pair in traj.records.windows(2) {
        ctx.push(&mut ledger, form, traj.config.tau, &pair[0], &pair[1]);
    }
    Ok(ledger)
}

struct BcContext {
    bound: f64,
    k: f64,
    q: f64,
    l1_0: f64,
    nonneg: bool,
    rho0_max: f64,
}

impl BcContext {
    fn new(form: &NonlocalForm, params: &FlowParams, initial: &StepRecord) -> Result<Self> {
        let bound = benilan_crandall_constant(params)?;
        let rho0 = initial.rho.values();
        Ok(Self {
            bound,
            k: (params.q - 1.0) / (params.q - 2.0).abs(),
            q: params.q,
            l1_0: rho0.iter().zip(form.mass()).map(|(r, m)| m * r.abs()).sum(),
            nonneg: rho0.iter().all(|r| *r >= 0.0),
            rho0_max: rho0.iter().fold(0.0f64, |m, r| m.max(r.abs())),
        })
    }

    fn push(&self, ledger: &mut InequalityLedger, form: &NonlocalForm, tau: f64, a: &StepRecord, b: &StepRecord) {
        if b.step < BC_BURN_IN {
            return;
        }
        let t = b.t;
        let drho: Vec<f64> = b
            .rho
            .values()
            .iter()
            .zip(a.rho.values())
            .map(|(x, y)| (x - y) / tau)
            .collect();
        let ratio = if self.l1_0 > 0.0 {
            t * drho.iter().zip(form.mass()).map(|(d, m)| m * d.abs()).sum::<f64>() / self.l1_0
        } else {
            0.0
        };
        ledger.push(
            b.step,
            t,
            CheckOutcome::new("bc_ratio", ratio, self.bound * (1.0 + TOL_BC), 0.0, Severity::Warning),
        );
        if self.nonneg && self.l1_0 > 0.0 {
            // q > 2: Δρ/τ ≤ k ρ/t; q < 2: Δρ/τ ≥ −k ρ/t.
            let sign = if self.q > 2.0 { 1.0 } else { -1.0 };
            let worst = drho
                .iter()
                .zip(b.rho.values())
                .map(|(d, r)| sign * d - (1.0 + TOL_BC) * self.k * r / t)
                .fold(f64::NEG_INFINITY, f64::max);
            ledger.push(
                b.step,
                t,
                CheckOutcome::new("bc_pointwise", worst, 0.0, ROUNDING * self.rho0_max / t, Severity::Warning),
            );
        }
    }
}

/// All per-trajectory checks in one ledger: dissipation, Rayleigh and, when
/// `q ≠ 2`, Bénilan–Crandall.
pub fn full_ledger(form: &NonlocalForm, traj: &Trajectory) -> Result<InequalityLedger> {
    check_len(form.n(), traj.domain.n)?;
    let mut checker = StepChecker::new(form, &traj.params, &traj.config, traj.initial())?;
    for pair in traj.records.windows(2) {
        checker.push(&pair[0], &pair[1]);
    }
    Ok(checker.finish())
}

/// Runs the checks of [`full_ledger`] on consecutive records as they are
/// produced, so long runs need not be stored.
pub struct StepChecker<'a> {
    form: &'a NonlocalForm,
    params: FlowParams,
    config: StepperConfig,
    bc: Option<BcContext>,
    rayleigh_live: bool,
    ledger: InequalityLedger,
}

impl<'a> StepChecker<'a> {
    pub fn new(
        form: &'a NonlocalForm,
        params: &FlowParams,
        config: &StepperConfig,
        initial: &StepRecord,
    ) -> Result<Self> {
        check_len(form.n(), initial.u.len())?;
        let bc = if params.is_linear() {
            None
        } else {
            Some(BcContext::new(form, params, initial)?)
        };
        Ok(Self {
            form,
            params: *params,
            config: *config,
            bc,
            rayleigh_live: true,
            ledger: InequalityLedger::default(),
        })
    }

    pub fn push(&mut self, a: &StepRecord, b: &StepRecord) {
        push_dissipation(&mut self.ledger, self.form, &self.params, &self.config, a, b);
        if self.rayleigh_live {
            self.rayleigh_live = push_rayleigh(&mut self.ledger, self.config.newton_tol, a, b);
        }
        if let Some(bc) = &self.bc {
            bc.push(&mut self.ledger, self.form, self.config.tau, a, b);
        }
    }

    pub fn finish(self) -> InequalityLedger {
        self.ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{build_form, Domain1D};
    use crate::stepper::{run_evolution, StepperConfig};
    use std::f64::consts::PI;

    #[test]
    fn rayleigh_is_scale_invariant() {
        let d = Domain1D::new(0.0, 1.0, 40).unwrap();
        let f = build_form(&d, 0.5).unwrap();
        let p = FlowParams::new(3.0, 0.5).unwrap();
        let u = SpatialField::from_fn(&d, |x| (PI * x).sin() + 0.2 * x);
        let r1 = rayleigh(&f, &p, &u).unwrap();
        let r5 = rayleigh(&f, &p, &u.scaled(5.0)).unwrap();
        assert!((r1 - r5).abs() <= 1e-12 * r1);
        assert!(matches!(
            rayleigh(&f, &p, &SpatialField::zeros(40)),
            Err(Error::UndefinedQuotient)
        ));
    }

    #[test]
    fn linear_sobolev_constant_is_inverse_root_eigenvalue() {
        let d = Domain1D::new(0.0, 1.0, 50).unwrap();
        let f = build_form(&d, 0.75).unwrap();
        let p = FlowParams::new(2.0, 0.75).unwrap();
        let e = principal_eigenpair(&f).unwrap();
        let c = best_sobolev_constant(&f, &p).unwrap();
        assert!((c - 1.0 / e.value.sqrt()).abs() < 1e-6 * c);
    }

    #[test]
    fn extinction_bounds_scale() {
        let d = Domain1D::new(0.0, 1.0, 40).unwrap();
        let f = build_form(&d, 1.0).unwrap();
        let p = FlowParams::new(3.0, 1.0).unwrap();
        let u = SpatialField::from_fn(&d, |x| (PI * x).sin());
        let (lo, hi) = extinction_bounds_with(&f, &p, &u, 0.7).unwrap();
        let (lo2, _) = extinction_bounds_with(&f, &p, &u.scaled(2.0), 0.7).unwrap();
        assert!((lo2 - 2.0 * lo).abs() < 1e-12 * lo);
        let c = best_sobolev_constant(&f, &p).unwrap();
        let (lo, hi2) = extinction_bounds_with(&f, &p, &u, c).unwrap();
        assert!(lo <= hi2 && hi > 0.0);
        assert!(extinction_bounds(&f, &FlowParams::new(1.5, 1.0).unwrap(), &u).is_err());
    }

    #[test]
    fn identical_trajectories_have_zero_differences() {
        let d = Domain1D::new(0.0, 1.0, 20).unwrap();
        let f = build_form(&d, 0.5).unwrap();
        let p = FlowParams::new(1.5, 0.5).unwrap();
        let u = SpatialField::from_fn(&d, |x| x * (1.0 - x));
        let tr = run_evolution(&f, &p, &u, &StepperConfig::with_tau(0.01), 0.1, 1e-8).unwrap();
        let l = contraction_checks(&f, &tr, &tr).unwrap();
        for (_, o) in l.outcomes() {
            assert_eq!(o.lhs, 0.0);
        }
    }

    #[test]
    fn zero_trajectory_has_zero_bc_ratio_and_empty_rayleigh_ledger() {
        let d = Domain1D::new(0.0, 1.0, 10).unwrap();
        let f = build_form(&d, 1.0).unwrap();
        let p = FlowParams::new(3.0, 1.0).unwrap();
        let mut tr =
            run_evolution(&f, &p, &SpatialField::zeros(10), &StepperConfig::with_tau(0.01), 0.2, 0.0)
                .unwrap();
        assert_eq!(tr.records.len(), 21);
        assert!(check_rayleigh_monotone(&tr).is_empty());
        let l = benilan_crandall_check(&f, &tr).unwrap();
        assert!(l.outcomes().all(|(_, o)| o.lhs == 0.0));
        tr.params = FlowParams::new(2.0, 1.0).unwrap();
        assert!(benilan_crandall_check(&f, &tr).is_err());
    }

    #[test]
    fn linear_fit_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        let (a, b, r2) = linear_fit(&pts);
        assert!((a - 3.0).abs() < 1e-12 && (b + 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn envelopes_agree_at_time_zero() {
        let d = Domain1D::new(0.0, 1.0, 30).unwrap();
        let f = build_form(&d, 1.0).unwrap();
        let p = FlowParams::new(1.5, 1.0).unwrap();
        let u = SpatialField::from_fn(&d, |x| (PI * x).sin());
        let tr = run_evolution(&f, &p, &u, &StepperConfig::with_tau(0.01), 0.1, 1e-8).unwrap();
        let c = best_sobolev_constant(&f, &p).unwrap();
        let rep = decay_envelopes(&tr, c).unwrap();
        let s0 = &rep.samples[0];
        assert_eq!(s0.lower, Some(s0.norm));
        assert_eq!(s0.upper, Some(s0.norm));
        for s in &rep.samples {
            assert!(s.lower.unwrap() <= s.upper.unwrap());
        }
    }
}
