//! Medium parameters, drive configuration and power calibration.

use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{hz_to_rad, EPSILON_0, HBAR, SPEED_OF_LIGHT};

/// Reduced dipole matrix element of the Rb D1 line, ⟨J=1/2‖er‖J'=1/2⟩, in C·m.
pub const RB_D1_REDUCED_DIPOLE: f64 = 2.537e-29;

/// Beam diameter used in the reference setup, m.
pub const REFERENCE_BEAM_DIAMETER: f64 = 750e-6;

/// Level order of every 4×4 matrix in the crate: `e, z, h, p`.
pub const LEVEL_E: usize = 0;
pub const LEVEL_Z: usize = 1;
pub const LEVEL_H: usize = 2;
pub const LEVEL_P: usize = 3;

/// One of the three optical fields of the tripod.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Zeeman,
    Hyperfine,
    Pump,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Zeeman, Field::Hyperfine, Field::Pump];

    /// Ground level the field couples to `e`.
    pub fn ground_level(self) -> usize {
        match self {
            Field::Zeeman => LEVEL_Z,
            Field::Hyperfine => LEVEL_H,
            Field::Pump => LEVEL_P,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Zeeman => "zeeman",
            Field::Hyperfine => "hyperfine",
            Field::Pump => "pump",
        })
    }
}

/// A weak signal field: the ones that are probed, delayed and stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Zeeman,
    Hyperfine,
}

impl Signal {
    pub const BOTH: [Signal; 2] = [Signal::Zeeman, Signal::Hyperfine];

    pub fn field(self) -> Field {
        match self {
            Signal::Zeeman => Field::Zeeman,
            Signal::Hyperfine => Field::Hyperfine,
        }
    }

    pub fn other(self) -> Signal {
        match self {
            Signal::Zeeman => Signal::Hyperfine,
            Signal::Hyperfine => Signal::Zeeman,
        }
    }

    pub fn ground_level(self) -> usize {
        self.field().ground_level()
    }

    pub fn optical_depth(self, p: &TripodParams) -> f64 {
        match self {
            Signal::Zeeman => p.optical_depth_z,
            Signal::Hyperfine => p.optical_depth_h,
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.field().fmt(f)
    }
}

impl std::str::FromStr for Signal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zeeman" | "z" => Ok(Signal::Zeeman),
            "hyperfine" | "h" => Ok(Signal::Hyperfine),
            other => Err(format!("unknown signal `{other}` (expected zeeman or hyperfine)")),
        }
    }
}

/// Physical constants of the tripod medium. Rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripodParams {
    /// Spontaneous decay e → z.
    pub gamma_e_z: f64,
    /// Spontaneous decay e → h.
    pub gamma_e_h: f64,
    /// Spontaneous decay e → p.
    pub gamma_e_p: f64,
    /// Direct damping of the z–h coherence.
    pub gamma_hz: f64,
    /// Direct damping of the h–p coherence.
    pub gamma_hp: f64,
    /// Direct damping of the z–p coherence.
    pub gamma_zp: f64,
    /// Incoherent population exchange rate h ⇄ z (each direction).
    pub exchange_g: f64,
    /// FWHM of the Gaussian one-photon detuning distribution, Hz (ordinary).
    pub doppler_fwhm: f64,
    /// Resonant single-velocity optical depth of the Zeeman transition.
    pub optical_depth_z: f64,
    /// Resonant single-velocity optical depth of the hyperfine transition.
    pub optical_depth_h: f64,
    /// Cell length, m.
    pub cell_length: f64,
    /// Ω = κ·√P, rad/(s·√W).
    pub rabi_calibration_kappa: f64,
    /// Additional damping of the optical coherences (buffer-gas broadening).
    #[serde(default)]
    pub extra_optical_dephasing: f64,
}

impl TripodParams {
    /// Total excited-state decay rate Γ_e.
    pub fn gamma_e(&self) -> f64 {
        self.gamma_e_z + self.gamma_e_h + self.gamma_e_p
    }

    /// Branching rate from `e` into `level`.
    pub fn branch(&self, level: usize) -> f64 {
        match level {
            LEVEL_Z => self.gamma_e_z,
            LEVEL_H => self.gamma_e_h,
            LEVEL_P => self.gamma_e_p,
            _ => 0.0,
        }
    }

    /// Direct damping rate of the ground coherence between two ground levels.
    pub fn ground_dephasing(&self, a: usize, b: usize) -> f64 {
        match (a.min(b), a.max(b)) {
            (LEVEL_Z, LEVEL_H) => self.gamma_hz,
            (LEVEL_H, LEVEL_P) => self.gamma_hp,
            (LEVEL_Z, LEVEL_P) => self.gamma_zp,
            _ => 0.0,
        }
    }

    /// Standard deviation of the velocity-detuning distribution, rad/s.
    pub fn doppler_sigma(&self) -> f64 {
        hz_to_rad(self.doppler_fwhm) / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    /// Absorption coefficient α₀ = OD / L for a signal, 1/m.
    pub fn alpha0(&self, signal: Signal) -> f64 {
        signal.optical_depth(self) / self.cell_length
    }

    /// Fitted parameter set for the reference rubidium cell.
    ///
    /// Decay, dephasing, exchange and Doppler values are the published fit.
    /// κ comes from [`rabi_calibration_from_beam`] for the D1 line and a
    /// 750 µm beam; the two optical depths are calibrated so that the group
    /// velocities cross at 135 km/s near 50 µW of hyperfine preparation.
    pub fn reference() -> Self {
        TripodParams {
            gamma_e_z: hz_to_rad(6.0e6),
            gamma_e_h: hz_to_rad(6.0e6),
            gamma_e_p: hz_to_rad(6.0e6),
            gamma_hz: hz_to_rad(5.0e3),
            gamma_hp: hz_to_rad(5.0e3),
            gamma_zp: hz_to_rad(40.0e3),
            exchange_g: hz_to_rad(50.0),
            doppler_fwhm: 500.0e6,
            optical_depth_z: REFERENCE_OPTICAL_DEPTH_Z,
            optical_depth_h: REFERENCE_OPTICAL_DEPTH_H,
            cell_length: 0.12,
            rabi_calibration_kappa: rabi_calibration_from_beam(
                RB_D1_REDUCED_DIPOLE / 3f64.sqrt(),
                REFERENCE_BEAM_DIAMETER,
            ),
            extra_optical_dephasing: 0.0,
        }
    }
}

/// Calibrated optical depths of [`TripodParams::reference`].
pub const REFERENCE_OPTICAL_DEPTH_Z: f64 = 866.0;
pub const REFERENCE_OPTICAL_DEPTH_H: f64 = 2580.0;

/// Pump power of the reference setup, W.
pub const REFERENCE_PUMP_POWER: f64 = 2.5e-3;

/// Complex Rabi frequencies and one-photon detunings of the three fields.
///
/// Two-photon detunings are always derived from the stored one-photon
/// detunings, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriveConfig {
    pub omega_z: C64,
    pub omega_h: C64,
    pub omega_p: C64,
    pub delta_z: f64,
    pub delta_h: f64,
    pub delta_p: f64,
}

impl DriveConfig {
    /// Resonant pump only.
    pub fn pump_only(omega_p: f64) -> Self {
        DriveConfig {
            omega_p: C64::new(omega_p, 0.0),
            ..Default::default()
        }
    }

    pub fn rabi(&self, field: Field) -> C64 {
        match field {
            Field::Zeeman => self.omega_z,
            Field::Hyperfine => self.omega_h,
            Field::Pump => self.omega_p,
        }
    }

    pub fn detuning(&self, field: Field) -> f64 {
        match field {
            Field::Zeeman => self.delta_z,
            Field::Hyperfine => self.delta_h,
            Field::Pump => self.delta_p,
        }
    }

    pub fn set_rabi(&mut self, field: Field, omega: C64) {
        match field {
            Field::Zeeman => self.omega_z = omega,
            Field::Hyperfine => self.omega_h = omega,
            Field::Pump => self.omega_p = omega,
        }
    }

    pub fn set_detuning(&mut self, field: Field, delta: f64) {
        match field {
            Field::Zeeman => self.delta_z = delta,
            Field::Hyperfine => self.delta_h = delta,
            Field::Pump => self.delta_p = delta,
        }
    }

    pub fn with_rabi(mut self, field: Field, omega: C64) -> Self {
        self.set_rabi(field, omega);
        self
    }

    pub fn with_detuning(mut self, field: Field, delta: f64) -> Self {
        self.set_detuning(field, delta);
        self
    }

    /// δ_zp = Δ_z − Δ_p.
    pub fn two_photon_zp(&self) -> f64 {
        self.delta_z - self.delta_p
    }

    /// δ_hp = Δ_h − Δ_p.
    pub fn two_photon_hp(&self) -> f64 {
        self.delta_h - self.delta_p
    }

    /// δ_zh = Δ_z − Δ_h.
    pub fn two_photon_zh(&self) -> f64 {
        self.delta_z - self.delta_h
    }

    /// Largest Rabi magnitude among the three fields.
    pub fn max_rabi(&self) -> f64 {
        Field::ALL
            .iter()
            .map(|&f| self.rabi(f).norm())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let mut bad = Vec::new();
        for f in Field::ALL {
            let o = self.rabi(f);
            if !(o.re.is_finite() && o.im.is_finite()) {
                bad.push(Violation::new(rabi_name(f), "Rabi frequency must be finite"));
            }
            if !self.detuning(f).is_finite() {
                bad.push(Violation::new(detuning_name(f), "detuning must be finite"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ParamError::Invalid(bad))
        }
    }
}

fn rabi_name(f: Field) -> &'static str {
    match f {
        Field::Zeeman => "omega_z",
        Field::Hyperfine => "omega_h",
        Field::Pump => "omega_p",
    }
}

fn detuning_name(f: Field) -> &'static str {
    match f {
        Field::Zeeman => "delta_z",
        Field::Hyperfine => "delta_h",
        Field::Pump => "delta_p",
    }
}

/// A single failed invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub reason: &'static str,
}

impl Violation {
    fn new(field: &'static str, reason: &'static str) -> Self {
        Violation { field, reason }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("invalid parameters: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("power must be non-negative and finite, got {0} W")]
    NegativePower(f64),
    #[error("calibration constant must be positive and finite, got {0}")]
    BadKappa(f64),
}

impl ParamError {
    /// Names of the offending fields, in report order.
    pub fn fields(&self) -> Vec<&'static str> {
        match self {
            ParamError::Invalid(v) => v.iter().map(|v| v.field).collect(),
            ParamError::NegativePower(_) => vec!["power"],
            ParamError::BadKappa(_) => vec!["rabi_calibration_kappa"],
        }
    }
}

/// Ω = κ·√P.
pub fn rabi_from_power(power: f64, kappa: f64) -> Result<f64, ParamError> {
    if !(power >= 0.0) || !power.is_finite() {
        return Err(ParamError::NegativePower(power));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(ParamError::BadKappa(kappa));
    }
    Ok(kappa * power.sqrt())
}

/// κ for a transition of dipole moment `dipole` (C·m) driven by a beam of
/// uniform intensity over a disc of the given diameter (m).
pub fn rabi_calibration_from_beam(dipole: f64, beam_diameter: f64) -> f64 {
    let radius = 0.5 * beam_diameter;
    let area = std::f64::consts::PI * radius * radius;
    (dipole / HBAR) * (2.0 / (SPEED_OF_LIGHT * EPSILON_0 * area)).sqrt()
}

/// Check every invariant of `p`, reporting each violated one by field name.
pub fn validate_params(p: TripodParams) -> Result<TripodParams, ParamError> {
    let mut bad = Vec::new();
    let non_negative: [(&'static str, f64); 11] = [
        ("gamma_e_z", p.gamma_e_z),
        ("gamma_e_h", p.gamma_e_h),
        ("gamma_e_p", p.gamma_e_p),
        ("gamma_hz", p.gamma_hz),
        ("gamma_hp", p.gamma_hp),
        ("gamma_zp", p.gamma_zp),
        ("exchange_g", p.exchange_g),
        ("doppler_fwhm", p.doppler_fwhm),
        ("rabi_calibration_kappa", p.rabi_calibration_kappa),
        ("extra_optical_dephasing", p.extra_optical_dephasing),
        ("cell_length", p.cell_length),
    ];
    for (name, v) in non_negative {
        if !v.is_finite() {
            bad.push(Violation::new(name, "must be finite"));
        } else if v < 0.0 {
            bad.push(Violation::new(name, "must be non-negative"));
        }
    }
    for (name, v) in [("optical_depth_z", p.optical_depth_z), ("optical_depth_h", p.optical_depth_h)] {
        if !(v.is_finite() && v >= 0.0) {
            bad.push(Violation::new(name, "optical depth must be finite and non-negative"));
        }
    }
    if p.cell_length.is_finite() && p.cell_length <= 0.0 && !bad.iter().any(|v| v.field == "cell_length") {
        bad.push(Violation::new("cell_length", "must be positive"));
    }
    let branches_ok = [p.gamma_e_z, p.gamma_e_h, p.gamma_e_p]
        .iter()
        .all(|g| g.is_finite() && *g >= 0.0);
    if branches_ok && !(p.gamma_e() > 0.0) {
        bad.push(Violation::new("gamma_e", "total excited decay must be positive"));
    }
    if bad.is_empty() {
        Ok(p)
    } else {
        Err(ParamError::Invalid(bad))
    }
}
