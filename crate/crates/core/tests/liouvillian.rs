mod common;

use common::{bare_params, c, kronecker_liouvillian, random_drives, random_hermitian, random_params, random_state};
use deit_core::liouvillian::*;
use deit_core::params::{DriveConfig, Field, TripodParams, LEVEL_E, LEVEL_H, LEVEL_P, LEVEL_Z};
use deit_core::units::hz_to_rad;
use deit_core::C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rel_max_diff(a: &Matrix16c, b: &Matrix16c) -> f64 {
    let scale = b.iter().map(|x| x.norm()).fold(0.0, f64::max);
    (a - b).iter().map(|x| x.norm()).fold(0.0, f64::max) / scale
}

#[test]
fn superoperator_matches_operator_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = TripodParams::reference();
    p.extra_optical_dephasing = hz_to_rad(1.0e5);
    for _ in 0..10 {
        let d = random_drives(&mut rng);
        let scaled = DriveConfig {
            omega_z: d.omega_z * 1e7,
            omega_h: d.omega_h * 1e7,
            omega_p: d.omega_p * 1e8,
            delta_z: d.delta_z * 1e7,
            delta_h: d.delta_h * 1e7,
            delta_p: d.delta_p * 1e7,
        };
        let h = build_hamiltonian(&scaled, 3.0e8);
        let l = build_liouvillian(&h, &p);
        assert!(rel_max_diff(l.matrix(), &kronecker_liouvillian(&h, &p)) < 1e-14);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let q = random_params(&mut rng);
    let h = build_hamiltonian(&random_drives(&mut rng), 0.4);
    assert!(rel_max_diff(build_liouvillian(&h, &q).matrix(), &kronecker_liouvillian(&h, &q)) < 1e-14);
}

#[test]
fn ground_coherence_rate_table() {
    let p = TripodParams::reference();
    let l = build_liouvillian(&Matrix4c::zeros(), &p);
    let rate = |i: usize, j: usize| -l.matrix()[(vec_index(i, j), vec_index(i, j))].re;
    let ge = p.gamma_e();
    let g = p.exchange_g;
    // hand-expanded: ½ Σ A†A weights on each index plus direct damping
    let table = [
        (LEVEL_Z, LEVEL_H, p.gamma_hz + g),
        (LEVEL_H, LEVEL_P, p.gamma_hp + 0.5 * g),
        (LEVEL_Z, LEVEL_P, p.gamma_zp + 0.5 * g),
        (LEVEL_E, LEVEL_Z, 0.5 * ge + 0.5 * g),
        (LEVEL_E, LEVEL_H, 0.5 * ge + 0.5 * g),
        (LEVEL_E, LEVEL_P, 0.5 * ge),
        (LEVEL_E, LEVEL_E, ge),
        (LEVEL_Z, LEVEL_Z, g),
        (LEVEL_P, LEVEL_P, 0.0),
    ];
    for (i, j, expected) in table {
        for (a, b) in [(i, j), (j, i)] {
            let got = rate(a, b);
            assert!((got - expected).abs() <= 1e-12 * expected.max(1.0), "({a},{b}) {got} vs {expected}");
        }
    }
}

#[test]
fn dark_state_is_decoupled() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let d = random_drives(&mut rng);
        let h = build_hamiltonian(&d, 0.7);
        let psi = [c(0.0, 0.0), d.omega_h, -d.omega_z, c(0.0, 0.0)];
        let coupling: C64 = (0..4).map(|k| h[(LEVEL_E, k)] * psi[k]).sum();
        assert!(coupling.norm() <= 1e-15 * d.max_rabi());
    }
}

#[test]
fn two_level_saturation() {
    let mut p = bare_params();
    p.gamma_e_p = 1.3;
    for omega in [0.1, 0.7, 2.0, 9.0] {
        let d = DriveConfig::pump_only(omega);
        let l = build_liouvillian(&build_hamiltonian(&d, 0.0), &p);
        let rho = steady_state_in_sector(&l, &DensityMatrix::pure_level(LEVEL_P)).unwrap();
        let ge = p.gamma_e();
        let expected = 0.25 * omega * omega / (0.25 * ge * ge + 0.5 * omega * omega);
        assert!((rho.population(LEVEL_E) - expected).abs() < 1e-8);
        assert!((rho.population(LEVEL_P) - (1.0 - expected)).abs() < 1e-8);
        assert!(rho.population(LEVEL_Z).abs() < 1e-12);
    }
}

#[test]
fn steady_state_residual_reference_medium() {
    let p = TripodParams::reference();
    let kappa = p.rabi_calibration_kappa;
    let d = DriveConfig::pump_only(kappa * 2.5e-3f64.sqrt())
        .with_rabi(Field::Hyperfine, c(kappa * 5e-5f64.sqrt(), 0.0))
        .with_detuning(Field::Zeeman, hz_to_rad(1e5));
    let l = build_liouvillian(&build_hamiltonian(&d, hz_to_rad(2e8)), &p);
    let rho = steady_state(&l).unwrap();
    rho.validate().unwrap();
    assert!(l.residual(&rho) <= 1e-10 * l.scale());
}

#[test]
fn exchange_relaxation_closed_form() {
    let mut p = bare_params();
    p.exchange_g = 2.0e5;
    let rho0 = DensityMatrix::from_populations([0.0, 0.7, 0.1, 0.2]);
    let sched = DriveSchedule::constant(DriveConfig::default(), 0.0, 5e-6);
    let max_dt = STEP_FACTOR / rate_bound(&sched, &p, 0.0);
    let traj = evolve(&rho0, &sched, &p, (0.0, 5e-6), max_dt / 10.0).unwrap();
    for (t, rho) in traj.times.iter().zip(&traj.states) {
        let diff = rho.population(LEVEL_Z) - rho.population(LEVEL_H);
        assert!((diff - 0.6 * (-2.0 * p.exchange_g * t).exp()).abs() < 1e-10);
        assert!((rho.population(LEVEL_P) - 0.2).abs() < 1e-14);
    }
}

fn relax_to_steady(p: &TripodParams, d: &DriveConfig) -> (DensityMatrix, DensityMatrix) {
    let l = build_liouvillian(&build_hamiltonian(d, 0.0), p);
    let target = steady_state(&l).unwrap();
    // slowest decay from the spectrum of L, excluding the stationary mode
    let eig = l.matrix().clone().eigenvalues().expect("16x16 eigenvalues");
    let mut rates: Vec<f64> = eig.iter().map(|z| -z.re).collect();
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let gap = rates[1];
    let t_end = 24.0 / gap;
    let sched = DriveSchedule::constant(*d, 0.0, t_end);
    let dt = STEP_FACTOR / rate_bound(&sched, p, 0.0);
    let opts = EvolveOptions { velocity_detuning: 0.0, record_every: usize::MAX };
    let rho0 = DensityMatrix::from_populations([0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    let traj = evolve_with(&rho0, &sched, p, (0.0, t_end), dt, opts).unwrap();
    (*traj.last(), target)
}

#[test]
fn long_time_evolution_reaches_steady_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let p = random_params(&mut rng);
        let d = random_drives(&mut rng);
        let (end, target) = relax_to_steady(&p, &d);
        assert!(end.max_diff(&target) < 1e-8, "{}", end.max_diff(&target));
    }
}

#[test]
fn rk4_convergence_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_params(&mut rng);
    let d = random_drives(&mut rng);
    let mut sched = DriveSchedule::new(d);
    for f in Field::ALL {
        sched
            .push(f, Segment::new(0.0, 4.0, Envelope::Gaussian { center: 2.0, fwhm: 1.5 }, d.rabi(f)))
            .unwrap();
    }
    let rho0 = DensityMatrix::from_matrix(random_state(&mut rng));
    let max_dt = STEP_FACTOR / rate_bound(&sched, &p, 0.0);
    let end = |dt: f64| *evolve(&rho0, &sched, &p, (0.0, 4.0), dt).unwrap().last();
    let h = 4.0 / (4.0 / max_dt).ceil();
    let (a, b, cc) = (end(h), end(h / 2.0), end(h / 4.0));
    let order = (a.max_diff(&b) / b.max_diff(&cc)).log2();
    assert!(order >= 3.5, "observed order {order}");
}

#[test]
fn preparation_survives_dark_gap() {
    let p = TripodParams::reference();
    let kappa = p.rabi_calibration_kappa;
    let prep = DriveConfig::pump_only(kappa * 2.5e-3f64.sqrt())
        .with_rabi(Field::Hyperfine, c(kappa * 55e-6f64.sqrt(), 0.0));
    let rho0 = steady_state(&build_liouvillian(&build_hamiltonian(&prep, 0.0), &p)).unwrap();
    let gap = 10e-6;
    let sched = DriveSchedule::constant(DriveConfig::default(), 0.0, gap);
    let dt = STEP_FACTOR / rate_bound(&sched, &p, 0.0);
    let opts = EvolveOptions { velocity_detuning: 0.0, record_every: usize::MAX };
    let end = *evolve_with(&rho0, &sched, &p, (0.0, gap), dt, opts).unwrap().last();
    for g in [LEVEL_Z, LEVEL_H, LEVEL_P] {
        let before = rho0.population(g) + rho0.population(LEVEL_E) * p.branch(g) / p.gamma_e();
        let after = end.population(g);
        assert!((after - before).abs() < 0.05 * before.max(0.05), "level {g}: {before} -> {after}");
    }
}

#[test]
fn dark_state_is_stationary_and_scale_free() {
    let mut p = TripodParams::reference();
    p.exchange_g = 0.0;
    p.gamma_hz = 0.0;
    let omega_p = hz_to_rad(8.0e6);
    let oz = c(4.0e6, 1.5e6);
    let oh = c(-2.0e6, 5.5e6);
    let mut reference_pops = None;
    for s in [0.1, 1.0, 10.0] {
        let d = DriveConfig::pump_only(omega_p)
            .with_rabi(Field::Zeeman, oz * s)
            .with_rabi(Field::Hyperfine, oh * s);
        let l = build_liouvillian(&build_hamiltonian(&d, 0.0), &p);
        let dark = DensityMatrix::pure_state([c(0.0, 0.0), oh * s, -oz * s, c(0.0, 0.0)]);
        assert!(l.residual(&dark) <= 1e-14 * l.scale());
        let rho = steady_state(&l).unwrap();
        assert!(rho.max_diff(&dark) < 1e-9);
        let pops = rho.populations();
        if let Some(r) = reference_pops {
            let r: [f64; 4] = r;
            for k in 0..4 {
                assert!((pops[k] - r[k]).abs() < 1e-9);
            }
        }
        reference_pops = Some(pops);
    }
}

#[test]
fn scale_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = random_params(&mut rng);
    let d = random_drives(&mut rng);
    let rho0 = DensityMatrix::from_matrix(random_state(&mut rng));
    let s = 1.0e6;
    let mut ps = p;
    for r in [
        &mut ps.gamma_e_z,
        &mut ps.gamma_e_h,
        &mut ps.gamma_e_p,
        &mut ps.gamma_hz,
        &mut ps.gamma_hp,
        &mut ps.gamma_zp,
        &mut ps.exchange_g,
    ] {
        *r *= s;
    }
    let ds = DriveConfig {
        omega_z: d.omega_z * s,
        omega_h: d.omega_h * s,
        omega_p: d.omega_p * s,
        delta_z: d.delta_z * s,
        delta_h: d.delta_h * s,
        delta_p: d.delta_p * s,
    };
    let n = 8000;
    let a = evolve(&rho0, &DriveSchedule::constant(d, 0.0, 8.0), &p, (0.0, 8.0), 8.0 / n as f64).unwrap();
    let b = evolve(&rho0, &DriveSchedule::constant(ds, 0.0, 8.0 / s), &ps, (0.0, 8.0 / s), 8.0 / s / n as f64)
        .unwrap();
    assert_eq!(a.states.len(), b.states.len());
    for (x, y) in a.states.iter().zip(&b.states) {
        assert!(x.max_diff(y) < 1e-12);
    }
}

#[test]
fn trace_drift_per_microsecond() {
    let p = TripodParams::reference();
    let kappa = p.rabi_calibration_kappa;
    let d = DriveConfig::pump_only(kappa * 2.5e-3f64.sqrt())
        .with_rabi(Field::Zeeman, c(kappa * 5e-5f64.sqrt(), 0.0))
        .with_rabi(Field::Hyperfine, c(kappa * 5e-5f64.sqrt(), 0.0));
    let sched = DriveSchedule::constant(d, 0.0, 1e-6);
    let dt = STEP_FACTOR / rate_bound(&sched, &p, 0.0);
    let rho0 = DensityMatrix::from_populations([0.0, 0.4, 0.4, 0.2]);
    let traj = evolve_with(&rho0, &sched, &p, (0.0, 1e-6), dt, EvolveOptions { record_every: 100, ..Default::default() })
        .unwrap();
    for rho in &traj.states {
        assert!((rho.trace() - c(1.0, 0.0)).norm() < 1e-9);
        assert!(rho.hermiticity_error() == 0.0);
    }
}

#[test]
fn non_finite_state_reported() {
    let p = random_params(&mut ChaCha8Rng::seed_from_u64(1));
    let mut m = Matrix4c::zeros();
    m[(1, 1)] = c(f64::NAN, 0.0);
    let sched = DriveSchedule::constant(DriveConfig::default(), 0.0, 1.0);
    let err = evolve(&DensityMatrix::from_matrix(m), &sched, &p, (0.0, 1.0), 1e-3).unwrap_err();
    assert!(matches!(err, LiouvillianError::NonFinite { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn generator_is_traceless_and_hermiticity_preserving(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng);
        let d = random_drives(&mut rng);
        let l = build_liouvillian(&build_hamiltonian(&d, 0.3), &p);
        let rho = DensityMatrix::from_matrix(random_hermitian(&mut rng));
        let out = l.apply(&rho);
        prop_assert!(out.trace().norm() < 1e-10);
        let herm = (out - out.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(herm < 1e-12);
    }

    #[test]
    fn velocity_shift_keeps_two_photon_detunings(seed in any::<u64>(), kv in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_drives(&mut rng);
        let h0 = build_hamiltonian(&d, 0.0);
        let h1 = build_hamiltonian(&d, kv);
        let diff = h1 - h0;
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j && i != LEVEL_E { kv } else { 0.0 };
                prop_assert!((diff[(i, j)] - c(expected, 0.0)).norm() < 1e-12);
            }
        }
        let gap = |h: &Matrix4c, a: usize, b: usize| (h[(a, a)] - h[(b, b)]).re;
        prop_assert!((gap(&h0, LEVEL_Z, LEVEL_H) - gap(&h1, LEVEL_Z, LEVEL_H)).abs() < 1e-12);
        prop_assert!((gap(&h0, LEVEL_Z, LEVEL_P) - gap(&h1, LEVEL_Z, LEVEL_P)).abs() < 1e-12);
    }

    #[test]
    fn steady_state_is_valid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng);
        let d = random_drives(&mut rng);
        let l = build_liouvillian(&build_hamiltonian(&d, 0.0), &p);
        let rho = steady_state(&l).unwrap();
        prop_assert!(rho.validate().is_ok());
        prop_assert!(l.residual(&rho) <= 1e-10 * l.scale());
    }
}
