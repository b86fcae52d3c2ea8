mod common;

use approx::assert_relative_eq;
use fraqflow::diagnostics::{
    benilan_crandall_check, best_sobolev_constant, check_rayleigh_monotone, contraction_checks, decay_envelopes,
    decay_log_slope, dissipation_checks, extinction_bounds, full_ledger, rayleigh, sobolev_maximizer, Severity,
};
use fraqflow::{
    build_form, lp_norm, principal_eigenpair, run_evolution, run_pair, Domain1D, FlowParams, SpatialField,
    StepperConfig,
};
use std::f64::consts::PI;

fn sine(d: &Domain1D) -> SpatialField {
    SpatialField::from_fn(d, |x| (PI * x).sin())
}

#[test]
fn linear_rayleigh_is_bounded_by_the_eigenvalue() {
    let d = Domain1D::new(0.0, 1.0, 40).unwrap();
    let f = build_form(&d, 0.5).unwrap();
    let p = FlowParams::new(2.0, 0.5).unwrap();
    let lambda = principal_eigenpair(&f).unwrap().value;
    let mut rng = common::rng(1);
    for _ in 0..200 {
        let u = SpatialField::new(common::random_values(&mut rng, 40, -1.0, 1.0)).unwrap();
        assert!(rayleigh(&f, &p, &u).unwrap() >= lambda - 1e-8);
    }
    assert!(rayleigh(&f, &p, &SpatialField::zeros(40)).is_err());
}

#[test]
fn eigenmode_rayleigh_is_constant() {
    let d = Domain1D::new(0.0, 1.0, 80).unwrap();
    let f = build_form(&d, 0.5).unwrap();
    let p = FlowParams::new(2.0, 0.5).unwrap();
    let e = principal_eigenpair(&f).unwrap();
    let traj = run_evolution(&f, &p, &e.vector, &StepperConfig::with_tau(1e-2), 0.5, 0.0).unwrap();
    for r in &traj.records {
        assert_relative_eq!(r.rayleigh.unwrap(), e.value, max_relative = 1e-8);
    }
}

#[test]
fn fractional_fast_diffusion_keeps_rayleigh_monotone() {
    let d = Domain1D::new(0.0, 1.0, 100).unwrap();
    let f = build_form(&d, 0.5).unwrap();
    let p = FlowParams::new(3.0, 0.5).unwrap();
    let u0 = SpatialField::from_fn(&d, |x| (PI * x).sin() * (1.0 + 2.0 * x) + 0.3 * (3.0 * PI * x).sin());
    let traj = run_evolution(&f, &p, &u0, &StepperConfig::with_tau(1e-3), 1.0, 1e-8).unwrap();
    let ledger = check_rayleigh_monotone(&traj);
    assert!(!ledger.is_empty());
    assert_eq!(ledger.fatal_violations(), 0);
}

#[test]
fn single_record_gives_empty_ledgers() {
    let d = Domain1D::new(0.0, 1.0, 10).unwrap();
    let f = build_form(&d, 1.0).unwrap();
    let p = FlowParams::new(3.0, 1.0).unwrap();
    let traj = run_evolution(&f, &p, &sine(&d), &StepperConfig::with_tau(0.5), 0.1, 1e-8).unwrap();
    assert_eq!(traj.records.len(), 1);
    assert!(check_rayleigh_monotone(&traj).is_empty());
    assert!(full_ledger(&f, &traj).unwrap().is_empty());
}

#[test]
fn linear_sobolev_constant() {
    let d = Domain1D::new(0.0, 1.0, 60).unwrap();
    for theta in [0.5, 1.0] {
        let f = build_form(&d, theta).unwrap();
        let p = FlowParams::new(2.0, theta).unwrap();
        let lambda = principal_eigenpair(&f).unwrap().value;
        assert_relative_eq!(best_sobolev_constant(&f, &p).unwrap(), lambda.powf(-0.5), max_relative = 1e-6);
    }
}

#[test]
fn sobolev_constant_grows_under_refinement() {
    for (q, theta) in [(3.0, 1.0), (3.0, 0.5), (1.5, 0.5)] {
        let c = |n: usize| {
            let d = Domain1D::new(0.0, 1.0, n).unwrap();
            best_sobolev_constant(&build_form(&d, theta).unwrap(), &FlowParams::new(q, theta).unwrap()).unwrap()
        };
        assert!(c(200) >= c(100) - 1e-4, "q = {q}, theta = {theta}");
    }
}

#[test]
fn sobolev_witness_attains_the_constant() {
    let d = Domain1D::new(0.0, 1.0, 80).unwrap();
    let f = build_form(&d, 0.5).unwrap();
    for q in [1.5, 3.0, 5.0] {
        let p = FlowParams::new(q, 0.5).unwrap();
        let (c, w) = sobolev_maximizer(&f, &p).unwrap();
        let x = f.bilinear(w.values(), w.values()).sqrt();
        assert_relative_eq!(lp_norm(&f, &w, q).unwrap(), c * x, max_relative = 1e-6);
    }
}

#[test]
fn dissipation_holds_at_every_step() {
    let d = Domain1D::new(0.0, 1.0, 80).unwrap();
    for (q, theta) in [(3.0, 0.5), (1.5, 1.0), (4.0, 0.75)] {
        let f = build_form(&d, theta).unwrap();
        let p = FlowParams::new(q, theta).unwrap();
        let traj = run_evolution(&f, &p, &sine(&d), &StepperConfig::with_tau(2e-3), 0.3, 1e-8).unwrap();
        let ledger = dissipation_checks(&f, &traj).unwrap();
        assert_eq!(ledger.count("lq_dissipation").0, traj.records.len() - 1);
        assert_eq!(ledger.fatal_violations(), 0, "q = {q}, theta = {theta}");
    }
}

#[test]
fn slow_diffusion_decays_like_inverse_square() {
    let d = Domain1D::new(0.0, 1.0, 100).unwrap();
    let f = build_form(&d, 1.0).unwrap();
    let p = FlowParams::new(1.5, 1.0).unwrap();
    let traj = run_evolution(&f, &p, &sine(&d), &StepperConfig::with_tau(0.01), 100.0, 1e-12).unwrap();
    let slope = decay_log_slope(&traj, 10.0, 100.0).unwrap();
    assert!((slope + 2.0).abs() < 0.2, "slope {slope}");
}

#[test]
fn fast_diffusion_stays_inside_envelopes() {
    let d = Domain1D::new(0.0, 1.0, 200).unwrap();
    let f = build_form(&d, 1.0).unwrap();
    let p = FlowParams::new(3.0, 1.0).unwrap();
    let u0 = sine(&d);
    let traj = run_evolution(&f, &p, &u0, &StepperConfig::with_tau(1e-3), 1.0, 1e-8).unwrap();
    let c = best_sobolev_constant(&f, &p).unwrap();
    assert_eq!(decay_envelopes(&traj, c).unwrap().violations, 0);
    let (lo, hi) = extinction_bounds(&f, &p, &u0).unwrap();
    // The recorded crossing lags the true extinction by a few steps.
    let t = traj.extinct_at.unwrap();
    assert!(lo <= t && t <= 1.05 * hi, "{lo} <= {t} <= {hi}");
}

#[test]
fn random_nonnegative_pair_contracts() {
    let n = 60;
    let d = Domain1D::new(0.0, 1.0, n).unwrap();
    let f = build_form(&d, 0.5).unwrap();
    let p = FlowParams::new(1.5, 0.5).unwrap();
    let mut rng = common::rng(17);
    let a = SpatialField::new(common::random_values(&mut rng, n, 0.0, 1.0)).unwrap();
    let b = SpatialField::new(common::random_values(&mut rng, n, 0.0, 1.0)).unwrap();
    let (ta, tb) = run_pair(&f, &p, &a, &b, &StepperConfig::with_tau(1e-3), 0.05, 1e-8).unwrap();
    let ledger = contraction_checks(&f, &ta, &tb).unwrap();
    assert_eq!(ledger.count("l1_contraction"), (50, 0));
    assert_eq!(ledger.count("dual_contraction"), (50, 0));
}

#[test]
fn half_datum_stays_below() {
    let d = Domain1D::new(0.0, 1.0, 80).unwrap();
    let f = build_form(&d, 0.5).unwrap();
    let p = FlowParams::new(3.0, 0.5).unwrap();
    let ub = SpatialField::from_fn(&d, |x| (PI * x).sin() * (1.0 + x));
    let ua = ub.scaled(0.5);
    let (ta, tb) = run_pair(&f, &p, &ua, &ub, &StepperConfig::with_tau(1e-3), 0.2, 1e-8).unwrap();
    let ledger = contraction_checks(&f, &ta, &tb).unwrap();
    let (checked, violations) = ledger.count("order");
    assert!(checked > 100);
    assert_eq!(violations, 0);
}

#[test]
fn benilan_crandall_ratio_and_pointwise_bounds() {
    let d = Domain1D::new(0.0, 1.0, 200).unwrap();
    for q in [3.0, 1.5] {
        let f = build_form(&d, 1.0).unwrap();
        let p = FlowParams::new(q, 1.0).unwrap();
        let traj = run_evolution(&f, &p, &sine(&d), &StepperConfig::with_tau(1e-3), 0.5, 1e-8).unwrap();
        let ledger = benilan_crandall_check(&f, &traj).unwrap();
        assert!(ledger.outcomes().all(|(r, o)| o.severity == Severity::Warning && r.step >= 10));
        let check = if q > 2.0 { "bc_ratio" } else { "bc_pointwise" };
        let (checked, violations) = ledger.count(check);
        assert!(checked > 0);
        assert_eq!(violations, 0, "q = {q}");
    }
}
