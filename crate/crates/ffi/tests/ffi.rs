use std::ffi::CString;
use std::process::Command;
use std::ptr;

use fraqflow_ffi::*;

fn new_flow(n: usize, q: f64, theta: f64, tau: f64) -> *mut FfFlow {
    let mut h = ptr::null_mut();
    let s = unsafe { ff_flow_new(0.0, 1.0, n, q, theta, tau, &mut h) };
    assert_eq!(s, FfStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let len = unsafe { ff_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..len.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn linear_flow_decays_like_the_first_mode() {
    let n = 40;
    let h = new_flow(n, 2.0, 1.0, 1e-3);
    let u0: Vec<f64> = (1..=n)
        .map(|i| (std::f64::consts::PI * i as f64 / (n + 1) as f64).sin())
        .collect();
    let mut e0 = FfEnergies::default();
    let mut e1 = FfEnergies::default();
    unsafe {
        assert_eq!(ff_flow_set_state(h, u0.as_ptr(), n), FfStatus::Ok);
        assert_eq!(ff_flow_energies(h, &mut e0), FfStatus::Ok);
        assert_eq!(ff_flow_step(h, 10), FfStatus::Ok);
        assert_eq!(ff_flow_energies(h, &mut e1), FfStatus::Ok);
    }
    assert!((e1.t - 0.01).abs() < 1e-15);
    // The discrete sine is an eigenvector, so the Rayleigh quotient is constant.
    assert!((e1.rayleigh - e0.rayleigh).abs() < 1e-10 * e0.rayleigh);
    let factor = (1.0 + 1e-3 * e0.rayleigh).powi(-10);
    assert!((e1.lq_norm / e0.lq_norm - factor).abs() < 1e-10);
    let mut u1 = vec![0.0; n];
    unsafe {
        assert_eq!(ff_flow_get_state(h, u1.as_mut_ptr(), n), FfStatus::Ok);
        ff_flow_free(h);
    }
    assert!((u1[n / 2] / u0[n / 2] - factor).abs() < 1e-10);
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut h = ptr::null_mut();
    let s = unsafe { ff_flow_new(0.0, 1.0, 10, 1.0, 0.5, 1e-3, &mut h) };
    assert_eq!(s, FfStatus::InvalidArgument);
    assert!(h.is_null());
    assert!(last_error().contains("q"));

    let s = unsafe { ff_flow_new(0.0, 1.0, 10, 3.0, 0.5, 1e-3, ptr::null_mut()) };
    assert_eq!(s, FfStatus::NullPointer);

    let h = new_flow(10, 3.0, 0.5, 1e-3);
    let v = [1.0; 5];
    unsafe {
        assert_eq!(ff_flow_set_state(h, v.as_ptr(), 5), FfStatus::DimensionMismatch);
        assert_eq!(ff_flow_set_state(h, ptr::null(), 10), FfStatus::NullPointer);
        assert_eq!(ff_flow_set_newton(h, -1.0, 10), FfStatus::InvalidArgument);
        assert_eq!(ff_flow_step(ptr::null_mut(), 1), FfStatus::NullPointer);
        ff_flow_free(h);
        ff_flow_free(ptr::null_mut());
    }
}

#[test]
fn zero_state_has_nan_rayleigh() {
    let h = new_flow(8, 1.5, 0.5, 1e-2);
    let mut e = FfEnergies::default();
    unsafe {
        assert_eq!(ff_flow_step(h, 3), FfStatus::Ok);
        assert_eq!(ff_flow_energies(h, &mut e), FfStatus::Ok);
        ff_flow_free(h);
    }
    assert_eq!(e.lq_norm, 0.0);
    assert!(e.rayleigh.is_nan());
}

#[test]
fn runs_a_config_document() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new("q = 3\ntheta = 0.5\nn = 30\ntau = 0.01\nt_end = 0.05\n").unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut status = -1;
    let s = unsafe { ff_run_config(cfg.as_ptr(), out.as_ptr(), &mut status) };
    assert_eq!(s, FfStatus::Ok);
    assert_eq!(status, 0);
    assert!(dir.path().join("trajectory.csv").exists());
    assert!(dir.path().join("summary.json").exists());

    let bad = CString::new("q = 3\ntheta = 2\n").unwrap();
    let s = unsafe { ff_run_config(bad.as_ptr(), ptr::null(), ptr::null_mut()) };
    assert_eq!(s, FfStatus::InvalidArgument);
    assert!(last_error().contains("line 2"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/fraqflow.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["ff_flow_new", "ff_flow_step", "ff_flow_free", "ff_last_error_message", "ff_run_config"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"fraqflow.h\"\nint main(void) { FfFlow *h = 0; return ff_flow_step(h, 0) == FF_STATUS_OK; }\n").unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler available, skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
