//! Maxwell–Bloch propagation of the two signal envelopes through the tripod
//! medium, in the frame moving with the pulses at c (τ = t − z/c).
//!
//! Atoms at each slice follow the master equation driven by the local
//! envelopes; the envelopes obey ∂_z Ω_g = i (α_g Γ_e / 2) ⟨ρ_eg⟩ with ⟨·⟩ the
//! velocity average. Slices are advanced with the explicit midpoint rule.
//!
//! In time the pump-dressed generator A is integrated exactly with the
//! fourth-order exponential time-differencing scheme of Cox and Matthews;
//! only the signal coupling and, while the pump ramps, the difference
//! between the pump and the nearest precomputed pump level are explicit.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::liouvillian::{
    build_hamiltonian, build_liouvillian_with, vec_index, DensityMatrix, Dissipation, LiouvillianError, Matrix16c,
    Matrix4c, Vector16c,
};
use crate::params::{rabi_from_power, DriveConfig, Field, ParamError, Signal, TripodParams, LEVEL_E};
use crate::quadrature::{QuadratureError, VelocityRule, PROPAGATION_NODES};
use crate::response::{
    group_velocity, prepared_state, velocity_rule, window_group_delay, BackgroundConfig, Doppler, ResponseError,
};
use crate::units::SPEED_OF_LIGHT;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Fewest z slices a propagation may use.
pub const MIN_SLICES: usize = 50;
/// Default pump switching time.
pub const DEFAULT_RAMP: f64 = 200e-9;
/// Default intensity FWHM of the signal pulses.
pub const DEFAULT_PULSE_FWHM: f64 = 1e-6;
/// dt times the largest explicit coupling must stay below this.
pub const EXPLICIT_STEP_FACTOR: f64 = 0.25;
/// Group velocities closer than this (relative) count as matched.
pub const MATCH_RTOL: f64 = 1e-9;
/// Largest resonant absorption exponent of one velocity class over one z
/// slice; the midpoint z step diverges beyond 2.
pub const Z_STEP_LIMIT: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error(transparent)]
    Liouvillian(#[from] LiouvillianError),
    #[error(transparent)]
    Response(#[from] ResponseError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid protocol: {0}")]
    Protocol(String),
    #[error("time step {dt:.3e} s is too large for the explicit coupling; use dt <= {max_dt:.3e} s")]
    StepTooLarge { dt: f64, max_dt: f64 },
    #[error("{signal} absorption per z slice too strong for nz = {nz}; use nz >= {min_nz}")]
    ZStepTooLarge { signal: Signal, nz: usize, min_nz: usize },
    #[error("field became non-finite at z = {z:.4e} m, t = {t:.4e} s")]
    NonFinite { z: f64, t: f64 },
    #[error("envelope carries no energy")]
    ZeroEnergy,
    #[error("v_z - v_h does not change sign between {lo:.3e} W and {hi:.3e} W")]
    NoCrossing { lo: f64, hi: f64 },
}

/// Gaussian input envelope; `fwhm` refers to the intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPulse {
    pub center: f64,
    pub fwhm: f64,
    pub peak: C64,
}

impl GaussianPulse {
    pub fn new(center: f64, fwhm: f64, peak: C64) -> Self {
        GaussianPulse { center, fwhm, peak }
    }

    pub fn value(&self, t: f64) -> C64 {
        let u = (t - self.center) / self.fwhm;
        self.peak * (-2.0 * std::f64::consts::LN_2 * u * u).exp()
    }
}

/// Optical pumping with one signal field before the pulses arrive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparationStep {
    pub field: Signal,
    /// W.
    pub power: f64,
    /// s. Long against optical pumping, short against ground relaxation.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageProtocol {
    pub zeeman: Option<GaussianPulse>,
    pub hyperfine: Option<GaussianPulse>,
    pub preparation: Option<PreparationStep>,
    /// Start of the pump ramp-down; `None` keeps the pump on throughout.
    pub pump_off: Option<f64>,
    /// Time the pump stays fully off.
    pub storage: f64,
    pub ramp: f64,
}

impl StorageProtocol {
    /// Pulses through a continuously pumped medium.
    pub fn slow_light(zeeman: Option<GaussianPulse>, hyperfine: Option<GaussianPulse>) -> Self {
        StorageProtocol { zeeman, hyperfine, preparation: None, pump_off: None, storage: 0.0, ramp: DEFAULT_RAMP }
    }

    pub fn pulse(&self, signal: Signal) -> Option<&GaussianPulse> {
        match signal {
            Signal::Zeeman => self.zeeman.as_ref(),
            Signal::Hyperfine => self.hyperfine.as_ref(),
        }
    }

    /// Start of the pump ramp-up.
    pub fn pump_on(&self) -> Option<f64> {
        self.pump_off.map(|t| t + self.ramp + self.storage)
    }

    /// Pump amplitude relative to its full value at time t.
    pub fn pump_envelope(&self, t: f64) -> f64 {
        let Some(off) = self.pump_off else { return 1.0 };
        let on = off + self.ramp + self.storage;
        let pi = std::f64::consts::PI;
        if t <= off {
            1.0
        } else if t < off + self.ramp {
            0.5 * (1.0 + (pi * (t - off) / self.ramp).cos())
        } else if t <= on {
            0.0
        } else if t < on + self.ramp {
            0.5 * (1.0 - (pi * (t - on) / self.ramp).cos())
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |m: String| Err(PropagationError::Protocol(m));
        if self.zeeman.is_none() && self.hyperfine.is_none() {
            return bad("no input pulse".into());
        }
        for s in Signal::BOTH {
            if let Some(p) = self.pulse(s) {
                if !(p.fwhm > 0.0) || !p.center.is_finite() || !(p.peak.re.is_finite() && p.peak.im.is_finite()) {
                    return bad(format!("{s} pulse is malformed"));
                }
            }
        }
        if let Some(prep) = &self.preparation {
            if !(prep.power >= 0.0) || !(prep.duration > 0.0) {
                return bad("preparation needs power >= 0 and duration > 0".into());
            }
        }
        if !(self.storage >= 0.0) || !self.storage.is_finite() {
            return bad(format!("storage duration {} must be >= 0", self.storage));
        }
        if self.pump_off.is_some() && !(self.ramp > 0.0) {
            return bad(format!("ramp time {} must be > 0", self.ramp));
        }
        if let Some(off) = self.pump_off {
            if !(off >= 0.0) || !off.is_finite() {
                return bad(format!("pump turn-off time {off} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Discretization of a propagation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nz: usize,
    pub dt: f64,
    /// Length of the retarded-time window, starting at 0.
    pub duration: f64,
    pub doppler: Doppler,
    /// Number of nonzero pump amplitudes with precomputed exponentials.
    pub pump_levels: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nz: MIN_SLICES,
            dt: 10e-9,
            duration: 10e-6,
            doppler: Doppler::Hermite(PROPAGATION_NODES),
            pump_levels: 32,
        }
    }
}

impl GridSpec {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    fn validate(&self) -> Result<(), PropagationError> {
        if self.nz < MIN_SLICES {
            return Err(PropagationError::Grid(format!("need at least {MIN_SLICES} z slices, got {}", self.nz)));
        }
        if !(self.dt > 0.0) || !(self.duration > 0.0) || self.steps() < 4 {
            return Err(PropagationError::Grid("need dt > 0 and at least 4 time steps".into()));
        }
        if ((self.steps() as f64) * self.dt - self.duration).abs() > 1e-9 * self.duration {
            return Err(PropagationError::Grid("duration must be a whole number of steps".into()));
        }
        if self.pump_levels == 0 {
            return Err(PropagationError::Grid("pump_levels must be positive".into()));
        }
        Ok(())
    }
}

/// Complex envelopes on a (z, τ) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    /// Positions of the stored slices, m.
    pub z: Vec<f64>,
    /// Retarded time τ = t − z/c, s.
    pub t: Vec<f64>,
    pub zeeman: Vec<Vec<C64>>,
    pub hyperfine: Vec<Vec<C64>>,
    /// Pump Rabi frequency at the entrance face.
    pub pump: Vec<C64>,
    pub cell_length: f64,
}

impl FieldMap {
    pub fn envelopes(&self, signal: Signal) -> &[Vec<C64>] {
        match signal {
            Signal::Zeeman => &self.zeeman,
            Signal::Hyperfine => &self.hyperfine,
        }
    }

    pub fn input(&self, signal: Signal) -> &[C64] {
        &self.envelopes(signal)[0]
    }

    pub fn output(&self, signal: Signal) -> &[C64] {
        self.envelopes(signal).last().expect("field map holds the entrance slice")
    }

    /// Transit time of light through the empty cell, L/c.
    pub fn vacuum_delay(&self) -> f64 {
        self.cell_length / SPEED_OF_LIGHT
    }

    pub fn dt(&self) -> f64 {
        self.t[1] - self.t[0]
    }

    /// Long format: `z_m,t_s,field,re,im`, every `t_stride`-th time.
    pub fn to_csv_long(&self, header: &[String], t_stride: usize) -> String {
        let mut out = String::new();
        for line in header {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("# t_s is the retarded time t - z/c\n");
        out.push_str("z_m,t_s,field,re,im\n");
        for (k, z) in self.z.iter().enumerate() {
            for n in (0..self.t.len()).step_by(t_stride.max(1)) {
                for s in Signal::BOTH {
                    let v = self.envelopes(s)[k][n];
                    let _ = writeln!(out, "{z:.6e},{:.9e},{s},{:.9e},{:.9e}", self.t[n], v.re, v.im);
                }
            }
        }
        out
    }

    /// Entrance and exit traces: `t_s,pump_re,pump_im,zeeman_in_re,...`.
    pub fn exit_traces_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "# t_s is the retarded time; exit traces reach the detector {:.6e} s later", self.vacuum_delay());
        out.push_str(EXIT_TRACE_COLUMNS);
        out.push('\n');
        for n in 0..self.t.len() {
            let cols = [
                self.pump[n],
                self.input(Signal::Zeeman)[n],
                self.input(Signal::Hyperfine)[n],
                self.output(Signal::Zeeman)[n],
                self.output(Signal::Hyperfine)[n],
            ];
            let _ = write!(out, "{:.9e}", self.t[n]);
            for c in cols {
                let _ = write!(out, ",{:.9e},{:.9e}", c.re, c.im);
            }
            out.push('\n');
        }
        out
    }
}

pub const EXIT_TRACE_COLUMNS: &str = "t_s,pump_re,pump_im,zeeman_in_re,zeeman_in_im,hyperfine_in_re,hyperfine_in_im,\
zeeman_out_re,zeeman_out_im,hyperfine_out_re,hyperfine_out_im";

/// Exponential time-differencing coefficients of one generator for step h.
struct EtdCoefficients {
    e: Sparse16,
    e_half: Sparse16,
    /// (h/2)·φ1(hA/2)
    p_half: Sparse16,
    f1: Sparse16,
    f2: Sparse16,
    f3: Sparse16,
}

/// Nonzero entries of a 16x16 kernel. With only the pump in the generator
/// the kernels are block diagonal, so most entries are exact zeros.
struct Sparse16 {
    entries: Vec<(usize, usize, C64)>,
}

impl Sparse16 {
    fn new(m: &Matrix16c) -> Self {
        let entries = (0..16)
            .flat_map(|i| (0..16).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = m[(i, j)];
                (v != C64::new(0.0, 0.0)).then_some((i, j, v))
            })
            .collect();
        Sparse16 { entries }
    }

    fn apply(&self, x: &Vector16c) -> Vector16c {
        let mut y = Vector16c::zeros();
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }
}

fn block(m: &DMatrix<C64>, r: usize, c: usize) -> Matrix16c {
    Matrix16c::from_fn(|i, j| m[(16 * r + i, 16 * c + j)])
}

/// e^M and φ1..φ3(M) from the exponential of the augmented matrix
/// [[M, I, 0, 0], [0, 0, I, 0], [0, 0, 0, I], [0, 0, 0, 0]].
fn phi_functions(m: &Matrix16c, order: usize) -> Vec<Matrix16c> {
    let n = 16 * (order + 1);
    let mut w = DMatrix::<C64>::zeros(n, n);
    for i in 0..16 {
        for j in 0..16 {
            w[(i, j)] = m[(i, j)];
        }
    }
    for b in 0..order {
        for i in 0..16 {
            w[(16 * b + i, 16 * (b + 1) + i)] = C64::new(1.0, 0.0);
        }
    }
    let ew = w.exp();
    (0..=order).map(|c| block(&ew, 0, c)).collect()
}

impl EtdCoefficients {
    fn new(a: &Matrix16c, h: f64) -> Self {
        let full = phi_functions(&(a * C64::new(h, 0.0)), 3);
        let half = phi_functions(&(a * C64::new(0.5 * h, 0.0)), 1);
        let (p1, p2, p3) = (&full[1], &full[2], &full[3]);
        let hc = C64::new(h, 0.0);
        EtdCoefficients {
            e: Sparse16::new(&full[0]),
            e_half: Sparse16::new(&half[0]),
            p_half: Sparse16::new(&(half[1] * C64::new(0.5 * h, 0.0))),
            f1: Sparse16::new(&((p1 - p2 * C64::new(3.0, 0.0) + p3 * C64::new(4.0, 0.0)) * hc)),
            f2: Sparse16::new(&((p2 - p3 * C64::new(2.0, 0.0)) * C64::new(2.0 * h, 0.0))),
            f3: Sparse16::new(&((p3 * C64::new(4.0, 0.0) - p2) * hc)),
        }
    }
}

/// −i[V, ρ] for the flattened ρ, V Hermitian.
fn coupling_rhs(v: &Matrix4c, u: &Vector16c) -> Vector16c {
    let rho = Matrix4c::from_fn(|i, j| u[vec_index(i, j)]);
    let c = (v * rho - rho * v) * (-I);
    Vector16c::from_fn(|k, _| c[(k / 4, k % 4)])
}

/// Value halfway between samples n and n+1 (cubic where possible).
fn midpoint(f: &[C64], n: usize) -> C64 {
    let len = f.len();
    if n >= 1 && n + 2 < len {
        (-f[n - 1] + (f[n] + f[n + 1]) * 9.0 - f[n + 2]) / 16.0
    } else if n == 0 && len > 2 {
        (f[0] * 3.0 + f[1] * 6.0 - f[2]) / 8.0
    } else if n >= 1 {
        (-f[n - 1] + f[n] * 6.0 + f[n + 1] * 3.0) / 8.0
    } else {
        (f[0] + f[1]) * 0.5
    }
}

/// Precomputed medium: velocity classes, their initial states and the
/// exponential integrators of each pump level.
struct Medium<'a> {
    params: &'a TripodParams,
    drives: DriveConfig,
    protocol: &'a StorageProtocol,
    grid: GridSpec,
    rule: VelocityRule,
    initial: Vec<Vector16c>,
    /// kernels[class][level]; level m has pump amplitude m/M of full.
    kernels: Vec<Vec<Option<EtdCoefficients>>>,
    levels: Vec<Vec<usize>>,
}

impl<'a> Medium<'a> {
    fn new(
        params: &'a TripodParams,
        drives: &DriveConfig,
        protocol: &'a StorageProtocol,
        grid: GridSpec,
    ) -> Result<Self, PropagationError> {
        let diss = Dissipation::new(params);
        let mut pump_only = *drives;
        pump_only.omega_z = C64::new(0.0, 0.0);
        pump_only.omega_h = C64::new(0.0, 0.0);
        let bg = preparation_background(params, &pump_only, protocol.preparation.as_ref())?;
        let rule = velocity_rule(&bg, grid.doppler, 0.0)?;
        let prep = match &bg.preparation {
            crate::response::Preparation::Prepared { drives, .. } => *drives,
            _ => pump_only,
        };
        let initial = rule
            .nodes()
            .iter()
            .map(|&kv| prepared_state(params, &prep, kv, true).map(|r| r.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;

        let m = grid.pump_levels;
        let steps = grid.steps();
        let transit = params.cell_length / SPEED_OF_LIGHT;
        // pump level used by every step, at the entrance and at the exit
        let level_of = |t: f64| (protocol.pump_envelope(t) * m as f64).round() as usize;
        let levels: Vec<Vec<usize>> = [0.0, transit]
            .iter()
            .map(|shift| (0..steps).map(|n| level_of((n as f64 + 0.5) * grid.dt + shift)).collect())
            .collect();
        let mut needed = vec![false; m + 1];
        for l in levels.iter().flatten() {
            needed[*l] = true;
        }
        let full = drives.omega_p;
        let kernels = rule
            .nodes()
            .par_iter()
            .map(|&kv| {
                (0..=m)
                    .map(|level| {
                        needed[level].then(|| {
                            let d = pump_only.with_rabi(Field::Pump, full * (level as f64 / m as f64));
                            let a = build_liouvillian_with(&build_hamiltonian(&d, kv), &diss);
                            EtdCoefficients::new(a.matrix(), grid.dt)
                        })
                    })
                    .collect()
            })
            .collect();
        Ok(Medium { params, drives: pump_only.with_rabi(Field::Pump, full), protocol, grid, rule, initial, kernels, levels })
    }

    /// Resonant field attenuation of the strongest velocity class over the
    /// whole cell, per signal: (od/2)·w·(ρ_gg − ρ_ee).
    fn class_depth(&self, signal: Signal) -> f64 {
        let g = vec_index(signal.ground_level(), signal.ground_level());
        let e = vec_index(LEVEL_E, LEVEL_E);
        let od = self.params.alpha0(signal) * self.params.cell_length;
        self.initial
            .iter()
            .zip(self.rule.weights())
            .map(|(u, w)| 0.5 * od * w * (u[g].re - u[e].re).max(0.0))
            .fold(0.0, f64::max)
    }

    fn pump_at(&self, t: f64) -> C64 {
        self.drives.omega_p * self.protocol.pump_envelope(t)
    }

    /// Velocity-averaged ρ_ez and ρ_eh at every grid time for the slice at
    /// z driven by the given envelopes.
    fn polarization(&self, fields: [&[C64]; 2], z: f64) -> Result<[Vec<C64>; 2], PropagationError> {
        let per_class = (0..self.rule.len())
            .into_par_iter()
            .map(|c| self.run_class(c, fields, z))
            .collect::<Result<Vec<_>, _>>()?;
        let nt = fields[0].len();
        let mut out = [vec![C64::new(0.0, 0.0); nt], vec![C64::new(0.0, 0.0); nt]];
        for ((pz, ph), w) in per_class.iter().zip(self.rule.weights()) {
            for n in 0..nt {
                out[0][n] += pz[n] * *w;
                out[1][n] += ph[n] * *w;
            }
        }
        Ok(out)
    }

    fn run_class(&self, class: usize, fields: [&[C64]; 2], z: f64) -> Result<(Vec<C64>, Vec<C64>), PropagationError> {
        let h = self.grid.dt;
        let nt = fields[0].len();
        let m = self.grid.pump_levels as f64;
        let transit = z / SPEED_OF_LIGHT;
        let levels = if z > 0.5 * self.params.cell_length { &self.levels[1] } else { &self.levels[0] };
        let ez = vec_index(LEVEL_E, Signal::Zeeman.ground_level());
        let eh = vec_index(LEVEL_E, Signal::Hyperfine.ground_level());
        let mut pz = Vec::with_capacity(nt);
        let mut ph = Vec::with_capacity(nt);
        let mut u = self.initial[class];
        let coupling = |oz: C64, oh: C64, t: f64, level: usize| -> Matrix4c {
            let residual = self.pump_at(t + transit) - self.drives.omega_p * (level as f64 / m);
            let d = DriveConfig { omega_z: oz, omega_h: oh, omega_p: residual, ..DriveConfig::default() };
            build_hamiltonian(&d, 0.0)
        };
        for n in 0..nt - 1 {
            pz.push(u[ez]);
            ph.push(u[eh]);
            let t = n as f64 * h;
            let level = levels[n];
            let k = self.kernels[class][level].as_ref().expect("kernel for every visited level");
            let v0 = coupling(fields[0][n], fields[1][n], t, level);
            let vm = coupling(midpoint(fields[0], n), midpoint(fields[1], n), t + 0.5 * h, level);
            let v1 = coupling(fields[0][n + 1], fields[1][n + 1], t + h, level);
            let nu = coupling_rhs(&v0, &u);
            let eu = k.e_half.apply(&u);
            let a = eu + k.p_half.apply(&nu);
            let na = coupling_rhs(&vm, &a);
            let b = eu + k.p_half.apply(&na);
            let nb = coupling_rhs(&vm, &b);
            let c = k.e_half.apply(&a) + k.p_half.apply(&(nb * C64::new(2.0, 0.0) - nu));
            let nc = coupling_rhs(&v1, &c);
            u = k.e.apply(&u) + k.f1.apply(&nu) + k.f2.apply(&(na + nb)) + k.f3.apply(&nc);
            if !(u[ez].re.is_finite() && u[ez].im.is_finite() && u[eh].re.is_finite() && u[eh].im.is_finite()) {
                return Err(PropagationError::NonFinite { z, t: t + h });
            }
        }
        pz.push(u[ez]);
        ph.push(u[eh]);
        Ok((pz, ph))
    }
}

/// Background for the spectral path matching a propagation run: pump-only
/// drives at probe time, prepared under pump plus the preparation field and
/// dephased by the dark gap.
pub fn preparation_background(
    params: &TripodParams,
    pump: &DriveConfig,
    prep: Option<&PreparationStep>,
) -> Result<BackgroundConfig, PropagationError> {
    let mut prep_drives = *pump;
    if let Some(step) = prep {
        let rabi = rabi_from_power(step.power, params.rabi_calibration_kappa)?;
        prep_drives.set_rabi(step.field.field(), C64::new(rabi, 0.0));
    }
    Ok(BackgroundConfig::prepared(*params, *pump, prep_drives, true))
}

/// Propagate the protocol's pulses through the cell.
pub fn propagate(
    protocol: &StorageProtocol,
    params: &TripodParams,
    drives: &DriveConfig,
    grid: &GridSpec,
) -> Result<FieldMap, PropagationError> {
    protocol.validate()?;
    grid.validate()?;
    let nt = grid.steps() + 1;
    let t: Vec<f64> = (0..nt).map(|n| n as f64 * grid.dt).collect();
    let input = |s: Signal| -> Vec<C64> {
        match protocol.pulse(s) {
            Some(p) => t.iter().map(|&x| p.value(x)).collect(),
            None => vec![C64::new(0.0, 0.0); nt],
        }
    };
    let mut fields = [input(Signal::Zeeman), input(Signal::Hyperfine)];
    let peak = |f: &[C64]| f.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let explicit = peak(&fields[0]) + peak(&fields[1]) + 0.5 * drives.omega_p.norm() / grid.pump_levels as f64;
    if explicit * grid.dt > EXPLICIT_STEP_FACTOR {
        return Err(PropagationError::StepTooLarge { dt: grid.dt, max_dt: EXPLICIT_STEP_FACTOR / explicit });
    }

    let medium = Medium::new(params, drives, protocol, *grid)?;
    for s in Signal::BOTH {
        let depth = medium.class_depth(s);
        if depth / grid.nz as f64 > Z_STEP_LIMIT {
            let min_nz = (depth / Z_STEP_LIMIT).ceil() as usize;
            return Err(PropagationError::ZStepTooLarge { signal: s, nz: grid.nz, min_nz });
        }
    }
    let dz = params.cell_length / grid.nz as f64;
    let gain = [Signal::Zeeman, Signal::Hyperfine].map(|s| I * (0.5 * params.alpha0(s) * params.gamma_e()));
    let stride = (grid.nz / MIN_SLICES).max(1);
    let mut map = FieldMap {
        z: vec![0.0],
        t: t.clone(),
        zeeman: vec![fields[0].clone()],
        hyperfine: vec![fields[1].clone()],
        pump: t.iter().map(|&x| medium.pump_at(x)).collect(),
        cell_length: params.cell_length,
    };
    let advance = |base: &[Vec<C64>; 2], pol: &[Vec<C64>; 2], step: f64| -> [Vec<C64>; 2] {
        [0, 1].map(|g| base[g].iter().zip(&pol[g]).map(|(e, p)| e + gain[g] * p * step).collect())
    };
    let mut pol = medium.polarization([&fields[0], &fields[1]], 0.0)?;
    for k in 0..grid.nz {
        let z = k as f64 * dz;
        let mid = advance(&fields, &pol, 0.5 * dz);
        let pol_mid = medium.polarization([&mid[0], &mid[1]], z + 0.5 * dz)?;
        fields = advance(&fields, &pol_mid, dz);
        let z_next = (k + 1) as f64 * dz;
        for (n, (a, b)) in fields[0].iter().zip(&fields[1]).enumerate() {
            if !(a.re.is_finite() && a.im.is_finite() && b.re.is_finite() && b.im.is_finite()) {
                return Err(PropagationError::NonFinite { z: z_next, t: t[n] });
            }
        }
        if k + 1 < grid.nz {
            pol = medium.polarization([&fields[0], &fields[1]], z_next)?;
        }
        if (k + 1) % stride == 0 || k + 1 == grid.nz {
            map.z.push(z_next);
            map.zeeman.push(fields[0].clone());
            map.hyperfine.push(fields[1].clone());
        }
    }
    Ok(map)
}

/// Delay of an output envelope relative to its input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    /// Difference of the energy centroids (first moments of |Ω|²).
    pub centroid: f64,
    /// Difference of the intensity maxima (parabolic refinement).
    pub peak: f64,
}

fn centroid(f: &[C64], t: &[f64]) -> Result<f64, PropagationError> {
    let (mut e, mut m) = (0.0, 0.0);
    for (v, x) in f.iter().zip(t) {
        let w = v.norm_sqr();
        e += w;
        m += w * x;
    }
    if !(e > 0.0) || !e.is_finite() {
        return Err(PropagationError::ZeroEnergy);
    }
    Ok(m / e)
}

fn peak_time(f: &[C64], t: &[f64]) -> f64 {
    let p: Vec<f64> = f.iter().map(|c| c.norm_sqr()).collect();
    let k = p
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > p[best] { i } else { best });
    if k == 0 || k + 1 == p.len() {
        return t[k];
    }
    let (a, b, c) = (p[k - 1], p[k], p[k + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    t[k] + shift * (t[k + 1] - t[k])
}

/// Delay between two envelopes sampled on the same times.
pub fn measure_delay(input: &[C64], output: &[C64], t: &[f64]) -> Result<DelayEstimate, PropagationError> {
    if input.len() != t.len() || output.len() != t.len() || t.len() < 3 {
        return Err(PropagationError::Grid("envelopes and times must have equal length >= 3".into()));
    }
    Ok(DelayEstimate {
        centroid: centroid(output, t)? - centroid(input, t)?,
        peak: peak_time(output, t) - peak_time(input, t),
    })
}

/// Lab-frame delay of each signal through the cell (retarded delay + L/c).
pub fn pulse_delays(map: &FieldMap) -> Result<[Option<DelayEstimate>; 2], PropagationError> {
    let one = |s: Signal| -> Result<Option<DelayEstimate>, PropagationError> {
        let input = map.input(s);
        if input.iter().all(|c| c.norm() == 0.0) {
            return Ok(None);
        }
        let d = measure_delay(input, map.output(s), &map.t)?;
        let l = map.vacuum_delay();
        Ok(Some(DelayEstimate { centroid: d.centroid + l, peak: d.peak + l }))
    };
    Ok([one(Signal::Zeeman)?, one(Signal::Hyperfine)?])
}

fn energy(f: &[C64], dt: f64) -> f64 {
    f.iter().map(|c| c.norm_sqr()).sum::<f64>() * dt
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageResult {
    pub map: FieldMap,
    /// Retrieved energy after pump turn-on over input energy, per signal
    /// (Zeeman, hyperfine); `None` when that pulse is absent.
    pub efficiency: [Option<f64>; 2],
    /// Largest exit envelope while the pump is fully off, over the input peak.
    pub leakage: [Option<f64>; 2],
}

/// Store and retrieve the pulses by switching the pump off and on.
pub fn storage_run(
    protocol: &StorageProtocol,
    params: &TripodParams,
    drives: &DriveConfig,
    grid: &GridSpec,
) -> Result<StorageResult, PropagationError> {
    protocol.validate()?;
    let off = protocol
        .pump_off
        .ok_or_else(|| PropagationError::Protocol("storage needs a pump turn-off time".into()))?;
    let on = protocol.pump_on().expect("pump_off is set");
    if on + protocol.ramp > grid.duration {
        return Err(PropagationError::Protocol("time window ends before the pump is back on".into()));
    }
    let mut pump_only = *drives;
    pump_only.omega_z = C64::new(0.0, 0.0);
    pump_only.omega_h = C64::new(0.0, 0.0);
    let bg = preparation_background(params, &pump_only, protocol.preparation.as_ref())?;
    let switch = off + 0.5 * protocol.ramp;
    for s in Signal::BOTH {
        if let Some(p) = protocol.pulse(s) {
            let tau = window_group_delay(&bg, s, s.optical_depth(params))?;
            if switch < p.center || switch > p.center + tau {
                return Err(PropagationError::Protocol(format!(
                    "{s} pulse is not inside the medium at pump turn-off (centre {:.3e} s, group delay {:.3e} s, switch {:.3e} s)",
                    p.center, tau, switch
                )));
            }
        }
    }
    let map = propagate(protocol, params, drives, grid)?;
    let dt = map.dt();
    let exit_shift = map.vacuum_delay();
    let mut efficiency = [None, None];
    let mut leakage = [None, None];
    for (k, s) in Signal::BOTH.into_iter().enumerate() {
        if protocol.pulse(s).is_none() {
            continue;
        }
        let input = map.input(s);
        let output = map.output(s);
        let retrieved: Vec<C64> = map
            .t
            .iter()
            .zip(output)
            .map(|(t, v)| if t + exit_shift >= on { *v } else { C64::new(0.0, 0.0) })
            .collect();
        efficiency[k] = Some(energy(&retrieved, dt) / energy(input, dt));
        let peak_in = input.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let dark = map
            .t
            .iter()
            .zip(output)
            .filter(|(t, _)| **t + exit_shift >= off + protocol.ramp && **t + exit_shift <= on)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max);
        leakage[k] = Some(dark / peak_in);
    }
    Ok(StorageResult { map, efficiency, leakage })
}

/// Window-centre group velocities (Zeeman, hyperfine) after preparation
/// with `field` at `power`, spectral path.
pub fn group_velocities(
    params: &TripodParams,
    pump: &DriveConfig,
    field: Signal,
    power: f64,
) -> Result<[f64; 2], PropagationError> {
    let prep = PreparationStep { field, power, duration: 500e-6 };
    let bg = preparation_background(params, pump, Some(&prep))?;
    let v = |s: Signal| -> Result<f64, PropagationError> {
        let tau = window_group_delay(&bg, s, s.optical_depth(params))?;
        Ok(group_velocity(tau, params.cell_length)?)
    };
    Ok([v(Signal::Zeeman)?, v(Signal::Hyperfine)?])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub power: f64,
    pub v_zeeman: f64,
    pub v_hyperfine: f64,
    pub iterations: usize,
}

/// Bisection on v_z(P) − v_h(P) over `range` (W) down to `tolerance` (W).
pub fn match_group_velocities(
    params: &TripodParams,
    pump: &DriveConfig,
    field: Signal,
    range: (f64, f64),
    tolerance: f64,
) -> Result<MatchResult, PropagationError> {
    let (mut lo, mut hi) = range;
    if !(lo >= 0.0) || !(hi > lo) || !(tolerance > 0.0) {
        return Err(PropagationError::Grid(format!("bad power bracket [{lo}, {hi}] or tolerance {tolerance}")));
    }
    let gap = |p: f64| -> Result<([f64; 2], f64), PropagationError> {
        let v = group_velocities(params, pump, field, p)?;
        let d = v[0] - v[1];
        Ok((v, if d.abs() <= MATCH_RTOL * v[0].abs().max(v[1].abs()) { 0.0 } else { d }))
    };
    let (v_lo, mut f_lo) = gap(lo)?;
    let done = |p: f64, v: [f64; 2], it: usize| MatchResult { power: p, v_zeeman: v[0], v_hyperfine: v[1], iterations: it };
    if f_lo == 0.0 {
        return Ok(done(lo, v_lo, 0));
    }
    let (v_hi, f_hi) = gap(hi)?;
    if f_hi == 0.0 {
        return Ok(done(hi, v_hi, 0));
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(PropagationError::NoCrossing { lo, hi });
    }
    let mut it = 0;
    while hi - lo > tolerance {
        it += 1;
        let mid = 0.5 * (lo + hi);
        let (v_mid, f_mid) = gap(mid)?;
        if f_mid == 0.0 {
            return Ok(done(mid, v_mid, it));
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let p = 0.5 * (lo + hi);
    let (v, _) = gap(p)?;
    Ok(done(p, v, it))
}

/// Hyperfine group delay after Zeeman preparation at `power` for
/// `duration`, over the delay with no preparation (spectral path).
pub fn delay_enhancement(
    params: &TripodParams,
    pump: &DriveConfig,
    power: f64,
    duration: f64,
) -> Result<f64, PropagationError> {
    if !(duration > 0.0) {
        return Err(PropagationError::Protocol(format!("preparation duration {duration} must be > 0")));
    }
    let od = params.optical_depth_h;
    let prepared = PreparationStep { field: Signal::Zeeman, power, duration };
    let with = window_group_delay(&preparation_background(params, pump, Some(&prepared))?, Signal::Hyperfine, od)?;
    let without = window_group_delay(&preparation_background(params, pump, None)?, Signal::Hyperfine, od)?;
    Ok(with / without)
}

/// The same ratio from propagated pulses (centroid delays).
pub fn delay_enhancement_propagated(
    params: &TripodParams,
    pump: &DriveConfig,
    pulse: GaussianPulse,
    power: f64,
    duration: f64,
    grid: &GridSpec,
) -> Result<f64, PropagationError> {
    let run = |prep: Option<PreparationStep>| -> Result<f64, PropagationError> {
        let mut protocol = StorageProtocol::slow_light(None, Some(pulse));
        protocol.preparation = prep;
        let map = propagate(&protocol, params, pump, grid)?;
        Ok(pulse_delays(&map)?[1].expect("hyperfine pulse present").centroid)
    };
    let with = run(Some(PreparationStep { field: Signal::Zeeman, power, duration }))?;
    Ok(with / run(None)?)
}

/// Reference state of one velocity class before the pulses (for tests and
/// diagnostics).
pub fn initial_state(
    params: &TripodParams,
    pump: &DriveConfig,
    prep: Option<&PreparationStep>,
    velocity_detuning: f64,
) -> Result<DensityMatrix, PropagationError> {
    let bg = preparation_background(params, pump, prep)?;
    match &bg.preparation {
        crate::response::Preparation::Prepared { drives, dephase } => {
            Ok(prepared_state(params, drives, velocity_detuning, *dephase)?)
        }
        _ => unreachable!("preparation_background always prepares"),
    }
}
