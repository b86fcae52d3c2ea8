//! C interface to the fraqflow solver.
//!
//! Every function returns an [`FfStatus`]. On failure the message is kept
//! per thread and can be read with [`ff_last_error_message`]. Handles are
//! opaque and must be released with [`ff_flow_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fraqflow::config::parse_config;
use fraqflow::experiment::run_experiment;
use fraqflow::{build_form, implicit_step, Domain1D, Error, FlowParams, NonlocalForm, SpatialField, StepRecord, StepperConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonConvergence = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// Norms of the current state. `rayleigh` is NaN for the zero state.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FfEnergies {
    pub t: f64,
    pub lq_norm: f64,
    pub x_energy: f64,
    pub dual_norm: f64,
    pub rayleigh: f64,
}

/// A grid, an operator and the current state of one evolution.
pub struct FfFlow {
    params: FlowParams,
    form: NonlocalForm,
    config: StepperConfig,
    u: SpatialField,
    step: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FfStatus {
    match e {
        Error::Parameter(_) | Error::Domain(_) | Error::Config { .. } | Error::LinearCase(_) | Error::Mismatch(_) => {
            FfStatus::InvalidArgument
        }
        Error::DimensionMismatch { .. } => FfStatus::DimensionMismatch,
        Error::NonConvergence { .. } | Error::StepFailure(_) | Error::EvolutionFailed { .. } | Error::NotExtinct => {
            FfStatus::NonConvergence
        }
        Error::Io(_) | Error::Json(_) => FfStatus::Io,
        _ => FfStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (FfStatus, String)>) -> FfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside fraqflow".into());
            FfStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (FfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (FfStatus, String) {
    (FfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn flow_mut<'a>(h: *mut FfFlow) -> Result<&'a mut FfFlow, (FfStatus, String)> {
    h.as_mut().ok_or_else(|| null("flow handle"))
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (FfStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (FfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ff_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates an evolution on `n` interior nodes of `(a, b)` with zero state.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn ff_flow_new(
    a: f64,
    b: f64,
    n: usize,
    q: f64,
    theta: f64,
    tau: f64,
    out: *mut *mut FfFlow,
) -> FfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let domain = Domain1D::new(a, b, n).map_err(lib_err)?;
        let params = FlowParams::new(q, theta).map_err(lib_err)?;
        let form = build_form(&domain, theta).map_err(lib_err)?;
        let config = StepperConfig::with_tau(tau);
        config.validate().map_err(lib_err)?;
        let flow = FfFlow {
            params,
            form,
            config,
            u: SpatialField::zeros(n),
            step: 0,
        };
        *out = Box::into_raw(Box::new(flow));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `h` must be null or a handle from [`ff_flow_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ff_flow_free(h: *mut FfFlow) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Sets the Newton tolerance and iteration cap.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ff_flow_set_newton(h: *mut FfFlow, tol: f64, max_iters: usize) -> FfStatus {
    guard(|| {
        let f = flow_mut(h)?;
        let cfg = StepperConfig {
            newton_tol: tol,
            newton_max: max_iters,
            ..f.config
        };
        cfg.validate().map_err(lib_err)?;
        f.config = cfg;
        Ok(())
    })
}

/// Replaces the state by `len` nodal values and resets time to zero.
///
/// # Safety
/// `h` must be a live handle and `values` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ff_flow_set_state(h: *mut FfFlow, values: *const f64, len: usize) -> FfStatus {
    guard(|| {
        let f = flow_mut(h)?;
        if values.is_null() {
            return Err(null("values"));
        }
        if len != f.form.n() {
            return Err(lib_err(Error::DimensionMismatch {
                expected: f.form.n(),
                found: len,
            }));
        }
        let v = std::slice::from_raw_parts(values, len).to_vec();
        f.u = SpatialField::new(v).map_err(lib_err)?;
        f.step = 0;
        Ok(())
    })
}

/// Copies the state into `out`, which holds `len` doubles.
///
/// # Safety
/// `h` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ff_flow_get_state(h: *mut FfFlow, out: *mut f64, len: usize) -> FfStatus {
    guard(|| {
        let f = flow_mut(h)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != f.form.n() {
            return Err(lib_err(Error::DimensionMismatch {
                expected: f.form.n(),
                found: len,
            }));
        }
        ptr::copy_nonoverlapping(f.u.values().as_ptr(), out, len);
        Ok(())
    })
}

/// Advances `steps` implicit steps. On failure the state is left at the last
/// successful step.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ff_flow_step(h: *mut FfFlow, steps: usize) -> FfStatus {
    guard(|| {
        let f = flow_mut(h)?;
        for _ in 0..steps {
            let s = implicit_step(&f.form, &f.params, &f.u, f.config.tau, &f.config).map_err(lib_err)?;
            f.u = s.u;
            f.step += 1;
        }
        Ok(())
    })
}

/// Time and norms of the current state.
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_flow_energies(h: *mut FfFlow, out: *mut FfEnergies) -> FfStatus {
    guard(|| {
        let f = flow_mut(h)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = f.step as f64 * f.config.tau;
        let r = StepRecord::new(&f.form, &f.params, f.step, t, f.u.clone(), 0, 0.0);
        *out = FfEnergies {
            t,
            lq_norm: r.lq_norm(f.params.q),
            x_energy: r.e_x,
            dual_norm: r.e_dual.sqrt(),
            rayleigh: r.rayleigh.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Runs the experiment described by a config document and writes its output
/// into `out_dir` (or the config's `out` when `out_dir` is null). The CLI
/// exit status of the run is stored in `exit_status`.
///
/// # Safety
/// `config` must be a NUL-terminated string, `out_dir` null or
/// NUL-terminated, and `exit_status` null or valid.
#[no_mangle]
pub unsafe extern "C" fn ff_run_config(
    config: *const c_char,
    out_dir: *const c_char,
    exit_status: *mut i32,
) -> FfStatus {
    guard(|| {
        let text = c_str(config, "config")?;
        let mut cfg = parse_config(text).map_err(lib_err)?;
        if !out_dir.is_null() {
            cfg.out = Some(PathBuf::from(c_str(out_dir, "out_dir")?));
        }
        let summary = run_experiment(&cfg).map_err(lib_err)?;
        if let Some(s) = exit_status.as_mut() {
            *s = summary.status.exit_code();
        }
        Ok(())
    })
}
