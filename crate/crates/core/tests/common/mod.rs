#![allow(dead_code)]

use deit_core::liouvillian::{vec_index, Matrix16c, Matrix4c};
use deit_core::params::{DriveConfig, TripodParams, LEVEL_E, LEVEL_H, LEVEL_P, LEVEL_Z};
use deit_core::units::hz_to_rad;
use deit_core::C64;
use rand::Rng;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Medium with every rate zeroed; tests switch on what they need.
pub fn bare_params() -> TripodParams {
    TripodParams {
        gamma_e_z: 0.0,
        gamma_e_h: 0.0,
        gamma_e_p: 0.0,
        gamma_hz: 0.0,
        gamma_hp: 0.0,
        gamma_zp: 0.0,
        exchange_g: 0.0,
        doppler_fwhm: 0.0,
        optical_depth_z: 1.0,
        optical_depth_h: 1.0,
        cell_length: 0.12,
        rabi_calibration_kappa: 1.0,
        extra_optical_dephasing: 0.0,
    }
}

/// Dimensionless medium (Γ_e of order one) with every channel open.
pub fn random_params<R: Rng>(rng: &mut R) -> TripodParams {
    TripodParams {
        gamma_e_z: rng.gen_range(0.3..1.0),
        gamma_e_h: rng.gen_range(0.3..1.0),
        gamma_e_p: rng.gen_range(0.3..1.0),
        gamma_hz: rng.gen_range(0.05..0.3),
        gamma_hp: rng.gen_range(0.05..0.3),
        gamma_zp: rng.gen_range(0.05..0.3),
        exchange_g: rng.gen_range(0.05..0.3),
        ..bare_params()
    }
}

pub fn random_drives<R: Rng>(rng: &mut R) -> DriveConfig {
    let mut amp = || {
        let r = rng.gen_range(0.3..1.5);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        C64::from_polar(r, phase)
    };
    let (omega_z, omega_h, omega_p) = (amp(), amp(), amp());
    DriveConfig {
        omega_z,
        omega_h,
        omega_p,
        delta_z: rng.gen_range(-1.0..1.0),
        delta_h: rng.gen_range(-1.0..1.0),
        delta_p: rng.gen_range(-1.0..1.0),
    }
}

/// Random Hermitian, unit-trace matrix (not necessarily positive).
pub fn random_hermitian<R: Rng>(rng: &mut R) -> Matrix4c {
    let a = Matrix4c::from_fn(|_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let h = (a + a.adjoint()) * c(0.5, 0.0);
    h / h.trace()
}

/// Random positive state: A A† normalized.
pub fn random_state<R: Rng>(rng: &mut R) -> Matrix4c {
    let a = Matrix4c::from_fn(|_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let m = a * a.adjoint();
    m / m.trace()
}

fn ket_bra(i: usize, j: usize) -> Matrix4c {
    let mut m = Matrix4c::zeros();
    m[(i, j)] = c(1.0, 0.0);
    m
}

/// Row-major vectorization: vec(A X B) = (A ⊗ Bᵀ) vec(X).
fn kron_left_right(a: &Matrix4c, b: &Matrix4c) -> Matrix16c {
    let bt = b.transpose();
    Matrix16c::from_fn(|r, col| a[(r / 4, col / 4)] * bt[(r % 4, col % 4)])
}

/// Generator assembled from operator products, independently of the
/// element-wise builder: −i[H,·] + Σ rate·D[A] + direct coherence damping.
pub fn kronecker_liouvillian(h: &Matrix4c, p: &TripodParams) -> Matrix16c {
    let id = Matrix4c::identity();
    let mi = c(0.0, -1.0);
    let mut l = (kron_left_right(h, &id) - kron_left_right(&id, h)) * mi;
    let mut jumps = vec![
        (p.gamma_e_z, ket_bra(LEVEL_Z, LEVEL_E)),
        (p.gamma_e_h, ket_bra(LEVEL_H, LEVEL_E)),
        (p.gamma_e_p, ket_bra(LEVEL_P, LEVEL_E)),
    ];
    jumps.push((p.exchange_g, ket_bra(LEVEL_Z, LEVEL_H)));
    jumps.push((p.exchange_g, ket_bra(LEVEL_H, LEVEL_Z)));
    for (rate, a) in jumps {
        let ad = a.adjoint();
        let ada = ad * a;
        let d = kron_left_right(&a, &ad)
            - (kron_left_right(&ada, &id) + kron_left_right(&id, &ada)) * c(0.5, 0.0);
        l += d * c(rate, 0.0);
    }
    let pairs = [
        (LEVEL_H, LEVEL_Z, p.gamma_hz),
        (LEVEL_H, LEVEL_P, p.gamma_hp),
        (LEVEL_Z, LEVEL_P, p.gamma_zp),
    ];
    for (a, b, g) in pairs {
        l[(vec_index(a, b), vec_index(a, b))] -= c(g, 0.0);
        l[(vec_index(b, a), vec_index(b, a))] -= c(g, 0.0);
    }
    for g in [LEVEL_Z, LEVEL_H, LEVEL_P] {
        l[(vec_index(LEVEL_E, g), vec_index(LEVEL_E, g))] -= c(p.extra_optical_dephasing, 0.0);
        l[(vec_index(g, LEVEL_E), vec_index(g, LEVEL_E))] -= c(p.extra_optical_dephasing, 0.0);
    }
    l
}

/// Closed-form weak-probe lineshape of the z–e–p Λ system with all atoms
/// in |z⟩: probe detuning `delta_probe`, pump detuning `delta_pump`.
pub fn lambda_lineshape(p: &TripodParams, omega_p: f64, delta_probe: f64, delta_pump: f64) -> C64 {
    let ge = p.gamma_e();
    let gamma_opt = 0.5 * ge + p.extra_optical_dephasing;
    let two_photon = delta_probe - delta_pump;
    let spin = c(p.gamma_zp, two_photon);
    let denom = c(gamma_opt, delta_probe) + c(omega_p * omega_p / 4.0, 0.0) / spin;
    c(0.5 * ge, 0.0) / denom
}

/// Rabi frequency in rad/s for a power in W under the reference κ.
pub fn rabi(p: &TripodParams, power: f64) -> f64 {
    p.rabi_calibration_kappa * power.sqrt()
}

pub fn mhz(f: f64) -> f64 {
    hz_to_rad(f * 1e6)
}
