//! Runs configured experiments and writes their CSV and JSON output.
//!
//! Solver failures do not abort a run: the records computed so far are
//! written and the failure is reported in the summary. Only configuration
//! and I/O errors are returned as `Err`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{
    dual_dissipation_budget, fit_extinction_samples, profile_convergence, rescale, rescaled_monotonicity,
    solve_stationary, ExtinctionFit, J_functional, RescaledTrajectory, Rescaler, StationaryProfile,
};
use crate::config::{ExperimentKind, RunConfig, SweepAxis};
use crate::diagnostics::{
    best_sobolev_constant, contraction_checks, envelope_checks, extinction_bounds_with, full_ledger,
    linear_fit, CheckTotals, InequalityLedger, StepChecker,
};
use crate::error::{Error, Result};
use crate::operator::{build_form, Domain1D, FlowParams, NonlocalForm, SpatialField};
use crate::stepper::{run_evolution, run_pair, Evolution, StepRecord, StepperConfig, Trajectory};

/// Environment variable capping the number of concurrent sweep children.
pub const THREADS_ENV: &str = "FRAQFLOW_THREADS";
/// Relative perturbation of the fitted extinction time in the sensitivity
/// report.
pub const T_STAR_PERTURBATION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// The run finished but a dissipation-type inequality failed.
    FatalViolations,
    /// A solver failed; output covers the part computed before the failure.
    Failed,
    /// Some sweep children failed.
    Partial,
}

impl RunStatus {
    /// Process exit code for the CLI.
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::FatalViolations => 1,
            Self::Failed => 2,
            Self::Partial => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileSummary {
    pub mu: f64,
    pub scale_c: f64,
    pub residual: f64,
    pub x_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSummary {
    pub samples: usize,
    pub final_s: f64,
    pub final_distance: f64,
    pub eventually_monotone: bool,
    pub final_stationary_residual: f64,
    /// Sum of `Δs ‖Δρ_v/Δs‖²_{X*}` over the samples.
    pub dissipation_sum: f64,
    /// `K(v(s₀)) − K(v(s_end))`.
    pub k_drop: f64,
    /// Final distance when the extinction time is perturbed by
    /// `∓T_STAR_PERTURBATION` relative.
    pub t_star_sensitivity: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub value: f64,
    pub dir: PathBuf,
    pub status: RunStatus,
    pub steps: usize,
    pub extinct_at: Option<f64>,
    pub final_rayleigh: Option<f64>,
    pub decay_slope: Option<f64>,
    pub t_star: Option<f64>,
    pub fatal_violations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub kind: ExperimentKind,
    pub config: RunConfig,
    pub wall_time_s: f64,
    pub steps: usize,
    pub final_t: f64,
    pub extinct_at: Option<f64>,
    pub extinction_bounds: Option<(f64, f64)>,
    pub fatal_violations: usize,
    pub warnings: usize,
    pub ledger_totals: Vec<CheckTotals>,
    pub final_rayleigh: Option<f64>,
    /// `q < 2`: slope of `log ‖u‖_q` against `log(1 + t)`; `q = 2`: slope of
    /// `log ‖u‖_q` against `t`. Fitted over the second half of the run.
    pub decay_slope: Option<f64>,
    pub extinction_fit: Option<ExtinctionFit>,
    pub profile: Option<ProfileSummary>,
    pub convergence: Option<ConvergenceSummary>,
    pub sweep_axis: Option<SweepAxis>,
    pub sweep: Vec<SweepEntry>,
    pub error: Option<String>,
}

impl RunSummary {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            status: RunStatus::Ok,
            kind: cfg.kind,
            config: cfg.clone(),
            wall_time_s: 0.0,
            steps: 0,
            final_t: 0.0,
            extinct_at: None,
            extinction_bounds: None,
            fatal_violations: 0,
            warnings: 0,
            ledger_totals: Vec::new(),
            final_rayleigh: None,
            decay_slope: None,
            extinction_fit: None,
            profile: None,
            convergence: None,
            sweep_axis: None,
            sweep: Vec::new(),
            error: None,
        }
    }

    fn fail(&mut self, e: &Error) {
        self.status = RunStatus::Failed;
        self.error = Some(e.to_string());
    }

    fn set_ledger(&mut self, ledger: &InequalityLedger) {
        self.fatal_violations = ledger.fatal_violations();
        self.warnings = ledger.warnings();
        self.ledger_totals = ledger.totals();
    }
}

/// Formats a number with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Output directory, or nothing when the run only returns its summary.
struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
        })
    }

    fn create(&self, name: &str) -> Result<Option<BufWriter<File>>> {
        match &self.dir {
            Some(d) => Ok(Some(BufWriter::new(File::create(d.join(name))?))),
            None => Ok(None),
        }
    }
}

const TRAJECTORY_HEADER: &str = "step,t,lq_norm,X_energy,dual_norm,rayleigh,newton_iters,residual";

/// Writes every `stride`-th record plus the last one.
struct TrajectoryWriter {
    w: Option<BufWriter<File>>,
    q: f64,
    stride: usize,
    last_written: Option<usize>,
}

impl TrajectoryWriter {
    fn new(sink: &Sink, name: &str, q: f64, stride: usize) -> Result<Self> {
        let mut w = sink.create(name)?;
        if let Some(w) = w.as_mut() {
            writeln!(w, "{TRAJECTORY_HEADER}")?;
        }
        Ok(Self {
            w,
            q,
            stride: stride.max(1),
            last_written: None,
        })
    }

    fn write_row(&mut self, r: &StepRecord) -> Result<()> {
        if let Some(w) = self.w.as_mut() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.step,
                fmt_num(r.t),
                fmt_num(r.lq_norm(self.q)),
                fmt_num(r.e_x),
                fmt_num(r.e_dual.sqrt()),
                fmt_opt(r.rayleigh),
                r.newton_iters,
                fmt_num(r.residual)
            )?;
        }
        self.last_written = Some(r.step);
        Ok(())
    }

    fn push(&mut self, r: &StepRecord) -> Result<()> {
        if r.step.is_multiple_of(self.stride) {
            self.write_row(r)?;
        }
        Ok(())
    }

    fn finish(mut self, last: Option<&StepRecord>) -> Result<()> {
        if let Some(r) = last {
            if self.last_written != Some(r.step) {
                self.write_row(r)?;
            }
        }
        if let Some(w) = self.w.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

fn write_trajectory(sink: &Sink, name: &str, traj: &Trajectory, stride: usize) -> Result<()> {
    let mut w = TrajectoryWriter::new(sink, name, traj.params.q, stride)?;
    for r in &traj.records {
        w.push(r)?;
    }
    w.finish(traj.records.last())
}

fn write_ledger(sink: &Sink, ledger: &InequalityLedger) -> Result<()> {
    let Some(mut w) = sink.create("ledger.csv")? else {
        return Ok(());
    };
    writeln!(w, "step,t,check,severity,lhs,rhs,slack,passed")?;
    for (row, o) in ledger.outcomes() {
        let severity = match o.severity {
            crate::diagnostics::Severity::Fatal => "fatal",
            crate::diagnostics::Severity::Warning => "warning",
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            row.step,
            fmt_num(row.t),
            o.check,
            severity,
            fmt_num(o.lhs),
            fmt_num(o.rhs),
            fmt_num(o.slack),
            o.passed()
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_profile(sink: &Sink, domain: &Domain1D, phi: &SpatialField) -> Result<()> {
    let Some(mut w) = sink.create("profile.csv")? else {
        return Ok(());
    };
    writeln!(w, "x,phi")?;
    for (i, v) in phi.values().iter().enumerate() {
        writeln!(w, "{},{}", fmt_num(domain.x(i)), fmt_num(*v))?;
    }
    w.flush()?;
    Ok(())
}

fn write_rescaled(sink: &Sink, resc: &RescaledTrajectory, distance: &[f64]) -> Result<()> {
    let Some(mut w) = sink.create("rescaled.csv")? else {
        return Ok(());
    };
    writeln!(w, "s,t,step,J,K,distance")?;
    for (smp, d) in resc.samples.iter().zip(distance) {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_num(smp.s),
            fmt_num(smp.t),
            smp.step,
            fmt_num(smp.j),
            fmt_num(smp.k),
            fmt_num(*d)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(sink: &Sink, summary: &RunSummary) -> Result<()> {
    if let Some(mut w) = sink.create("summary.json")? {
        serde_json::to_writer_pretty(&mut w, summary)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(())
}

fn stepper_config(cfg: &RunConfig) -> StepperConfig {
    StepperConfig {
        newton_tol: cfg.newton_tol,
        newton_max: cfg.newton_max,
        ..StepperConfig::with_tau(cfg.tau)
    }
}

/// Decay slope over the second half of `(t, ‖u‖_q)` samples.
fn decay_slope(q: f64, norms: &[(f64, f64)]) -> Option<f64> {
    if q > 2.0 {
        return None;
    }
    let t_final = norms.last()?.0;
    let pts: Vec<(f64, f64)> = norms
        .iter()
        .filter(|(t, n)| *t >= 0.5 * t_final && *n > 0.0)
        .map(|&(t, n)| if q < 2.0 { ((1.0 + t).ln(), n.ln()) } else { (t, n.ln()) })
        .collect();
    (pts.len() >= 2).then(|| linear_fit(&pts).1)
}

/// Runs `run_evolution`, keeping the partial trajectory on failure.
fn evolve_or_partial(
    form: &NonlocalForm,
    params: &FlowParams,
    u0: &SpatialField,
    cfg: &StepperConfig,
    t_end: f64,
    ext_tol: f64,
    summary: &mut RunSummary,
) -> Result<Option<Trajectory>> {
    match run_evolution(form, params, u0, cfg, t_end, ext_tol) {
        Ok(t) => Ok(Some(t)),
        Err(e) => {
            summary.fail(&e);
            match e {
                Error::EvolutionFailed { partial, .. } => Ok(Some(*partial)),
                Error::Io(_) | Error::Json(_) => Err(e),
                _ => Ok(None),
            }
        }
    }
}

fn record_trajectory(summary: &mut RunSummary, traj: &Trajectory) {
    let last = traj.last();
    summary.steps = last.step;
    summary.final_t = last.t;
    summary.extinct_at = traj.extinct_at;
    summary.final_rayleigh = last.rayleigh;
    let q = traj.params.q;
    let norms: Vec<(f64, f64)> = traj.records.iter().map(|r| (r.t, r.lq_norm(q))).collect();
    summary.decay_slope = decay_slope(q, &norms);
}

fn profile_summary(form: &NonlocalForm, p: &StationaryProfile) -> ProfileSummary {
    ProfileSummary {
        mu: p.mu,
        scale_c: p.scale_c,
        residual: p.residual,
        x_norm: form.bilinear(p.phi.values(), p.phi.values()).max(0.0).sqrt(),
        iterations: p.iterations,
    }
}

/// Executes the pipeline selected by `cfg.kind`, writing output files to
/// `cfg.out` when it is set.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.kind == ExperimentKind::Sweep {
        let axis = cfg.sweep_axis.expect("validated");
        return run_sweep(cfg, axis, &cfg.sweep_values);
    }
    let start = Instant::now();
    let sink = Sink::new(cfg.out.as_deref())?;
    let mut summary = RunSummary::new(cfg);
    let setup = (|| -> Result<_> {
        let domain = Domain1D::new(cfg.a, cfg.b, cfg.n)?;
        let params = FlowParams::new(cfg.q, cfg.theta)?;
        let form = build_form(&domain, cfg.theta)?;
        let u0 = cfg.initial.sample(&domain)?;
        let step_cfg = stepper_config(cfg);
        step_cfg.validate()?;
        Ok((domain, params, form, u0, step_cfg))
    })();
    match setup {
        Ok((domain, params, form, u0, step_cfg)) => {
            let ctx = Context {
                cfg,
                sink: &sink,
                domain,
                params,
                form: &form,
                u0,
                step_cfg,
            };
            let res = match cfg.kind {
                ExperimentKind::Evolve => ctx.evolve(&mut summary),
                ExperimentKind::Pair => ctx.pair(&mut summary),
                ExperimentKind::Asymptotic => ctx.asymptotic(&mut summary),
                ExperimentKind::Stationary => ctx.stationary(&mut summary),
                ExperimentKind::Sweep => unreachable!("handled above"),
            };
            match res {
                Ok(()) => {}
                Err(e @ (Error::Io(_) | Error::Json(_))) => return Err(e),
                Err(e) => summary.fail(&e),
            }
        }
        Err(e) => summary.fail(&e),
    }
    if summary.status == RunStatus::Ok && summary.fatal_violations > 0 {
        summary.status = RunStatus::FatalViolations;
    }
    summary.wall_time_s = start.elapsed().as_secs_f64();
    write_summary(&sink, &summary)?;
    Ok(summary)
}

struct Context<'a> {
    cfg: &'a RunConfig,
    sink: &'a Sink,
    domain: Domain1D,
    params: FlowParams,
    form: &'a NonlocalForm,
    u0: SpatialField,
    step_cfg: StepperConfig,
}

impl Context<'_> {
    fn sobolev(&self) -> Option<f64> {
        if self.params.is_linear() {
            None
        } else {
            best_sobolev_constant(self.form, &self.params).ok()
        }
    }

    fn trajectory_ledger(&self, traj: &Trajectory, c_q: Option<f64>) -> Result<InequalityLedger> {
        let mut ledger = full_ledger(self.form, traj)?;
        if let Some(c) = c_q {
            if traj.initial().rayleigh.is_some() {
                ledger = ledger.merge(envelope_checks(traj, c)?);
            }
        }
        Ok(ledger)
    }

    fn evolve(&self, summary: &mut RunSummary) -> Result<()> {
        let c_q = self.sobolev();
        if self.params.q > 2.0 {
            if let Some(c) = c_q {
                summary.extinction_bounds = Some(extinction_bounds_with(self.form, &self.params, &self.u0, c)?);
            }
        }
        let Some(traj) = evolve_or_partial(
            self.form,
            &self.params,
            &self.u0,
            &self.step_cfg,
            self.cfg.t_end,
            self.cfg.ext_tol,
            summary,
        )?
        else {
            return Ok(());
        };
        record_trajectory(summary, &traj);
        write_trajectory(self.sink, "trajectory.csv", &traj, self.cfg.stride)?;
        let ledger = self.trajectory_ledger(&traj, c_q)?;
        write_ledger(self.sink, &ledger)?;
        summary.set_ledger(&ledger);
        Ok(())
    }

    fn pair(&self, summary: &mut RunSummary) -> Result<()> {
        let ub0 = self.cfg.initial_b.sample(&self.domain)?;
        let (ta, tb) = match run_pair(
            self.form,
            &self.params,
            &self.u0,
            &ub0,
            &self.step_cfg,
            self.cfg.t_end,
            self.cfg.ext_tol,
        ) {
            Ok(p) => p,
            Err(e) => {
                summary.fail(&e);
                if let Error::EvolutionFailed { partial, .. } = e {
                    record_trajectory(summary, &partial);
                    write_trajectory(self.sink, "trajectory.csv", &partial, self.cfg.stride)?;
                }
                return Ok(());
            }
        };
        record_trajectory(summary, &ta);
        write_trajectory(self.sink, "trajectory.csv", &ta, self.cfg.stride)?;
        write_trajectory(self.sink, "trajectory_b.csv", &tb, self.cfg.stride)?;
        let mut ledger_b = full_ledger(self.form, &tb)?;
        for row in &mut ledger_b.rows {
            for o in &mut row.outcomes {
                o.check.push_str("_b");
            }
        }
        let ledger = full_ledger(self.form, &ta)?
            .merge(ledger_b)
            .merge(contraction_checks(self.form, &ta, &tb)?);
        write_ledger(self.sink, &ledger)?;
        summary.set_ledger(&ledger);
        Ok(())
    }

    fn stationary(&self, summary: &mut RunSummary) -> Result<()> {
        let profile = solve_stationary(self.form, &self.params, &self.u0, self.cfg.profile_tol)?;
        write_profile(self.sink, &self.domain, &profile.phi)?;
        summary.profile = Some(profile_summary(self.form, &profile));
        Ok(())
    }

    fn asymptotic(&self, summary: &mut RunSummary) -> Result<()> {
        if self.params.is_linear() {
            return Err(Error::LinearCase("asymptotic profile"));
        }
        let profile = solve_stationary(self.form, &self.params, &self.u0, self.cfg.profile_tol)?;
        write_profile(self.sink, &self.domain, &profile.phi)?;
        summary.profile = Some(profile_summary(self.form, &profile));
        let (resc, ledger, sensitivity) = if self.params.q > 2.0 {
            match self.extinguishing(summary, &profile)? {
                Some(r) => r,
                None => return Ok(()),
            }
        } else {
            match self.spreading(summary)? {
                Some((r, l)) => (r, l, None),
                None => return Ok(()),
            }
        };
        let j_phi = J_functional(self.form, &self.params, &profile.phi)?;
        let ledger = ledger.merge(rescaled_monotonicity(&resc, j_phi));
        write_ledger(self.sink, &ledger)?;
        summary.set_ledger(&ledger);
        if resc.samples.is_empty() {
            return Err(Error::Numerical("no rescaled samples were produced".into()));
        }
        let conv = profile_convergence(self.form, &resc, &profile)?;
        write_rescaled(self.sink, &resc, &conv.distance)?;
        let (dissipation_sum, k_drop) = dual_dissipation_budget(self.form, &resc);
        summary.convergence = Some(ConvergenceSummary {
            samples: resc.samples.len(),
            final_s: conv.final_s,
            final_distance: conv.final_distance,
            eventually_monotone: conv.eventually_monotone,
            final_stationary_residual: conv.final_stationary_residual,
            dissipation_sum,
            k_drop,
            t_star_sensitivity: sensitivity,
        });
        Ok(())
    }

    /// `q > 2`: evolves to extinction, fits `t*` and rescales up to `s_end`.
    #[allow(clippy::type_complexity)]
    fn extinguishing(
        &self,
        summary: &mut RunSummary,
        profile: &StationaryProfile,
    ) -> Result<Option<(RescaledTrajectory, InequalityLedger, Option<(f64, f64)>)>> {
        let c_q = self.sobolev();
        let mut t_end = self.cfg.t_end;
        if let Some(c) = c_q {
            let bounds = extinction_bounds_with(self.form, &self.params, &self.u0, c)?;
            summary.extinction_bounds = Some(bounds);
            t_end = t_end.max(2.0 * bounds.1);
        }
        let Some(traj) = evolve_or_partial(
            self.form,
            &self.params,
            &self.u0,
            &self.step_cfg,
            t_end,
            self.cfg.ext_tol,
            summary,
        )?
        else {
            return Ok(None);
        };
        record_trajectory(summary, &traj);
        write_trajectory(self.sink, "trajectory.csv", &traj, self.cfg.stride)?;
        let ledger = self.trajectory_ledger(&traj, c_q)?;
        if summary.status != RunStatus::Ok {
            write_ledger(self.sink, &ledger)?;
            summary.set_ledger(&ledger);
            return Ok(None);
        }
        let q = self.params.q;
        let samples: Vec<(f64, f64)> = traj.records.iter().map(|r| (r.t, r.lq_norm(q))).collect();
        let fit = fit_extinction_samples(q, &samples, self.cfg.ext_tol)?;
        let t_star = fit.t_star;
        summary.extinction_fit = Some(fit);
        let resc = self.truncate(rescale(self.form, &traj, Some(t_star))?);
        let mut perturbed = [0.0; 2];
        for (slot, sign) in perturbed.iter_mut().zip([-1.0, 1.0]) {
            let r = self.truncate(rescale(self.form, &traj, Some(t_star * (1.0 + sign * T_STAR_PERTURBATION)))?);
            *slot = match r.samples.is_empty() {
                true => f64::NAN,
                false => profile_convergence(self.form, &r, profile)?.final_distance,
            };
        }
        Ok(Some((resc, ledger, Some((perturbed[0], perturbed[1])))))
    }

    fn truncate(&self, mut r: RescaledTrajectory) -> RescaledTrajectory {
        let s_end = self.cfg.s_end * (1.0 + 1e-12);
        r.samples.retain(|s| s.s <= s_end);
        r
    }

    /// `q < 2`: streams the evolution to `t = e^{s_end} − 1`, checking and
    /// rescaling on the fly.
    fn spreading(&self, summary: &mut RunSummary) -> Result<Option<(RescaledTrajectory, InequalityLedger)>> {
        let t_end = self.cfg.s_end.exp() - 1.0;
        let q = self.params.q;
        let mut rescaler = Rescaler::new(self.form, &self.params, None, self.cfg.s_end)?;
        let mut writer = TrajectoryWriter::new(self.sink, "trajectory.csv", q, self.cfg.stride)?;
        let mut checker: Option<StepChecker> = None;
        let mut prev: Option<StepRecord> = None;
        let mut norms = Vec::new();
        let evo = Evolution::new(self.form, &self.params, &self.u0, &self.step_cfg, t_end, self.cfg.ext_tol)?;
        for rec in evo {
            let rec = match rec {
                Ok(r) => r,
                Err(e) => {
                    summary.fail(&e);
                    break;
                }
            };
            writer.push(&rec)?;
            norms.push((rec.t, rec.lq_norm(q)));
            if summary.extinct_at.is_none() && rec.lq_norm(q) < self.cfg.ext_tol {
                summary.extinct_at = Some(rec.t);
            }
            match (&prev, checker.as_mut()) {
                (Some(p), Some(c)) => c.push(p, &rec),
                _ => checker = Some(StepChecker::new(self.form, &self.params, &self.step_cfg, &rec)?),
            }
            rescaler.push(rec.clone())?;
            prev = Some(rec);
        }
        writer.finish(prev.as_ref())?;
        let ledger = checker.map(StepChecker::finish).unwrap_or_default();
        if let Some(last) = &prev {
            summary.steps = last.step;
            summary.final_t = last.t;
            summary.final_rayleigh = last.rayleigh;
        }
        summary.decay_slope = decay_slope(q, &norms);
        if summary.status != RunStatus::Ok {
            write_ledger(self.sink, &ledger)?;
            summary.set_ledger(&ledger);
            return Ok(None);
        }
        Ok(Some((rescaler.finish()?, ledger)))
    }
}

/// Number of concurrent sweep children: `FRAQFLOW_THREADS` when set to a
/// positive integer, otherwise the rayon default.
pub fn sweep_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn child_config(cfg: &RunConfig, axis: SweepAxis, value: f64) -> Result<RunConfig> {
    let mut c = cfg.clone();
    if c.kind == ExperimentKind::Sweep {
        c.kind = ExperimentKind::Evolve;
    }
    c.sweep_axis = None;
    c.sweep_values.clear();
    match axis {
        SweepAxis::Tau => c.tau = value,
        SweepAxis::Q => c.q = value,
        SweepAxis::Theta => c.theta = value,
        SweepAxis::N => {
            if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                return Err(Error::Parameter(format!("n must be a positive integer, got {value}")));
            }
            c.n = value as usize;
        }
    }
    c.out = cfg.out.as_ref().map(|d| d.join(format!("{}={}", axis.as_str(), value)));
    Ok(c)
}

/// Runs one child per value, at most [`sweep_threads`] at a time, and writes
/// `sweep.csv` and `summary.json` into `cfg.out`.
pub fn run_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<RunSummary> {
    let start = Instant::now();
    let sink = Sink::new(cfg.out.as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep_threads())
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start sweep workers: {e}")))?;
    let results: Vec<Result<SweepEntry>> = pool.install(|| {
        values
            .par_iter()
            .map(|&value| {
                let child = child_config(cfg, axis, value);
                let dir = cfg
                    .out
                    .as_ref()
                    .map(|d| d.join(format!("{}={}", axis.as_str(), value)))
                    .unwrap_or_default();
                let blank = |status, error| SweepEntry {
                    value,
                    dir: dir.clone(),
                    status,
                    steps: 0,
                    extinct_at: None,
                    final_rayleigh: None,
                    decay_slope: None,
                    t_star: None,
                    fatal_violations: 0,
                    error,
                };
                let child = match child {
                    Ok(c) => c,
                    Err(e) => return Ok(blank(RunStatus::Failed, Some(e.to_string()))),
                };
                let s = match run_experiment(&child) {
                    Ok(s) => s,
                    Err(e @ (Error::Io(_) | Error::Json(_))) => return Err(e),
                    Err(e) => return Ok(blank(RunStatus::Failed, Some(e.to_string()))),
                };
                Ok(SweepEntry {
                    status: s.status,
                    steps: s.steps,
                    extinct_at: s.extinct_at,
                    final_rayleigh: s.final_rayleigh,
                    decay_slope: s.decay_slope,
                    t_star: s.extinction_fit.as_ref().map(|f| f.t_star),
                    fatal_violations: s.fatal_violations,
                    error: s.error,
                    ..blank(RunStatus::Ok, None)
                })
            })
            .collect()
    });
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut summary = RunSummary::new(cfg);
    summary.kind = ExperimentKind::Sweep;
    summary.sweep_axis = Some(axis);
    summary.fatal_violations = entries.iter().map(|e| e.fatal_violations).sum();
    summary.status = if entries.iter().any(|e| e.status == RunStatus::Failed) {
        RunStatus::Partial
    } else if entries.iter().any(|e| e.status == RunStatus::FatalViolations) {
        RunStatus::FatalViolations
    } else {
        RunStatus::Ok
    };
    if let Some(mut w) = sink.create("sweep.csv")? {
        writeln!(
            w,
            "{},status,steps,extinct_at,final_rayleigh,decay_slope,t_star,fatal_violations",
            axis.as_str()
        )?;
        for e in &entries {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt_num(e.value),
                serde_json::to_value(e.status)?.as_str().unwrap_or_default(),
                e.steps,
                fmt_opt(e.extinct_at),
                fmt_opt(e.final_rayleigh),
                fmt_opt(e.decay_slope),
                fmt_opt(e.t_star),
                e.fatal_violations
            )?;
        }
        w.flush()?;
    }
    summary.sweep = entries;
    summary.wall_time_s = start.elapsed().as_secs_f64();
    write_summary(&sink, &summary)?;
    Ok(summary)
}
