//! Weak-probe linear response of the tripod: lineshapes, transmission,
//! window contrast, group delay and group velocity.
//!
//! The lineshape s is the probe coherence normalized so that an isolated
//! two-level transition at line centre gives s = 1. The field amplitude of a
//! probe decays as exp(−od·s/2), so intensity transmission is exp(−od·Re s).

use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::liouvillian::{
    build_hamiltonian, build_liouvillian_with, steady_state_in_sector, trace_constrained, vec_index,
    ConstrainedSolver, DensityMatrix, Dissipation, LiouvillianError, Matrix4c, Vector16c, TRACE_ROW,
};
use crate::params::{DriveConfig, Field, Signal, TripodParams, LEVEL_E};
use crate::quadrature::{Feature, QuadratureError, VelocityRule, DEFAULT_HERMITE_NODES};
use crate::units::{rad_to_hz, SPEED_OF_LIGHT};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResponseError {
    #[error(transparent)]
    Liouvillian(#[from] LiouvillianError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Params(#[from] crate::params::ParamError),
    #[error("probe is not weak: responses at two amplitudes differ by {relative:.3e} (limit 5e-3)")]
    Linearity { relative: f64 },
    #[error("finite-probe method needs a stationary background")]
    FiniteProbeNeedsStationary,
    #[error("linear-response system is singular and has no consistent solution")]
    Inconsistent,
    #[error("invalid detuning grid: {0}")]
    InvalidGrid(String),
    #[error("no transparency window found")]
    NoWindow,
    #[error("detuning {0:.6e} rad/s is not an interior grid point")]
    EdgeOfGrid(f64),
    #[error("optical depth must be finite and non-negative, got {0}")]
    BadOpticalDepth(f64),
    #[error("group delay {tau:.3e} s makes the group velocity non-physical for L = {length} m")]
    Superluminal { tau: f64, length: f64 },
}

/// How the atoms found the state the probe acts upon.
#[derive(Debug, Clone, PartialEq)]
pub enum Preparation {
    /// Steady state of the background drives themselves.
    Stationary,
    /// Steady state of `drives`, reached before the probing configuration is
    /// switched on. With `dephase`, excited population is returned to the
    /// ground levels by the branching ratios and all coherences are dropped,
    /// which is what a short dark gap between preparation and probing does.
    Prepared { drives: DriveConfig, dephase: bool },
    /// A fixed initial state, identical for every velocity class.
    Explicit(DensityMatrix),
}

/// Everything except the probe: medium, background drives, preparation.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundConfig {
    pub params: TripodParams,
    pub drives: DriveConfig,
    pub preparation: Preparation,
}

impl BackgroundConfig {
    pub fn new(params: TripodParams, drives: DriveConfig) -> Self {
        BackgroundConfig { params, drives, preparation: Preparation::Stationary }
    }

    pub fn prepared(params: TripodParams, drives: DriveConfig, prep: DriveConfig, dephase: bool) -> Self {
        BackgroundConfig {
            params,
            drives,
            preparation: Preparation::Prepared { drives: prep, dephase },
        }
    }

    /// Background drives with the probe amplitude removed.
    pub fn drives_without(&self, probe: Signal) -> DriveConfig {
        self.drives.with_rabi(probe.field(), C64::new(0.0, 0.0))
    }
}

/// Which laser the detuning grid moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// Probe one-photon detuning = nominal + δ.
    Probe,
    /// Pump one-photon detuning = nominal − δ; signals stay put.
    Pump,
}

/// Velocity averaging used for a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Doppler {
    Off,
    Hermite(usize),
    /// Composite rule resolving every homogeneous line (see quadrature).
    Resolved,
}

impl Doppler {
    pub fn is_on(self) -> bool {
        !matches!(self, Doppler::Off)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseMethod {
    Perturbative,
    FiniteProbe,
}

fn shifted(d: &DriveConfig, probe: Signal, delta: f64, sweep: Sweep) -> DriveConfig {
    match sweep {
        Sweep::Probe => {
            let f = probe.field();
            d.with_detuning(f, d.detuning(f) + delta)
        }
        Sweep::Pump => d.with_detuning(Field::Pump, d.delta_p - delta),
    }
}

/// State reached under `drives` in a velocity class, optionally dephased.
pub fn prepared_state(
    params: &TripodParams,
    drives: &DriveConfig,
    velocity_detuning: f64,
    dephase: bool,
) -> Result<DensityMatrix, LiouvillianError> {
    let diss = Dissipation::new(params);
    prepared_with(&diss, drives, velocity_detuning, dephase)
}

fn prepared_with(
    diss: &Dissipation,
    drives: &DriveConfig,
    kv: f64,
    dephase: bool,
) -> Result<DensityMatrix, LiouvillianError> {
    let l = build_liouvillian_with(&build_hamiltonian(drives, kv), diss);
    let rho = match ConstrainedSolver::new(&l) {
        Ok(solver) => DensityMatrix::from_vec(&solver.stationary()).hermitized(),
        // several stationary states: the one reached from thermal equilibrium
        Err(LiouvillianError::DegenerateSteadyState { .. }) => steady_state_in_sector(&l, &thermal_state())?,
        Err(e) => return Err(e),
    };
    Ok(if dephase { dephased(&rho, diss) } else { rho })
}

/// Ground levels equally populated, nothing excited: the state before any
/// light has acted.
pub fn thermal_state() -> DensityMatrix {
    let third = 1.0 / 3.0;
    DensityMatrix::from_populations([0.0, third, third, third])
}

/// Effect of a short dark interval: excited population decays into the
/// ground levels by the branching ratios and every coherence is lost.
pub fn dephased(rho: &DensityMatrix, diss: &Dissipation) -> DensityMatrix {
    let mut pops = rho.populations();
    let total: f64 = diss.branches.iter().sum();
    let ree = pops[LEVEL_E];
    pops[LEVEL_E] = 0.0;
    for g in 1..4 {
        pops[g] += ree * diss.branches[g] / total;
    }
    DensityMatrix::from_populations(pops)
}

/// −i[A, ρ] on 4×4 matrices, flattened.
fn commutator_vec(a: &Matrix4c, rho: &Matrix4c) -> Vector16c {
    let c = (a * rho - rho * a) * (-I);
    Vector16c::from_fn(|k, _| c[(k / 4, k % 4)])
}

fn unflatten(v: &Vector16c) -> Matrix4c {
    Matrix4c::from_fn(|i, j| v[vec_index(i, j)])
}

/// Interaction Hamiltonian of a unit, real probe Rabi frequency.
fn probe_coupling(probe: Signal) -> Matrix4c {
    let g = probe.ground_level();
    let mut h = Matrix4c::zeros();
    h[(LEVEL_E, g)] = C64::new(-0.5, 0.0);
    h[(g, LEVEL_E)] = C64::new(-0.5, 0.0);
    h
}

/// Response and its slope in probe detuning for one velocity class.
struct NodeResponse {
    s: C64,
    ds: C64,
}

struct Problem<'a> {
    bg: &'a BackgroundConfig,
    probe: Signal,
    diss: Dissipation,
    coupling: Matrix4c,
    gamma_e: f64,
}

impl<'a> Problem<'a> {
    fn new(bg: &'a BackgroundConfig, probe: Signal) -> Self {
        Problem {
            bg,
            probe,
            diss: Dissipation::new(&bg.params),
            coupling: probe_coupling(probe),
            gamma_e: bg.params.gamma_e(),
        }
    }

    /// s = (Γ_e/2)·ρ_eg / (i·Ω/2) with Ω = 1.
    fn normalize(&self, rho_eg: C64) -> C64 {
        -I * self.gamma_e * rho_eg
    }

    fn node(&self, delta: f64, sweep: Sweep, kv: f64, slope: bool) -> Result<NodeResponse, ResponseError> {
        let drives = shifted(&self.bg.drives_without(self.probe), self.probe, delta, sweep);
        let l0 = build_liouvillian_with(&build_hamiltonian(&drives, kv), &self.diss);
        let eg = vec_index(LEVEL_E, self.probe.ground_level());
        let solver = ConstrainedSolver::from_constrained(trace_constrained(&l0));
        let rho0 = match (&self.bg.preparation, &solver) {
            (Preparation::Stationary, Ok(s)) => unflatten(&s.stationary()),
            (Preparation::Stationary, Err(e)) => return Err(e.clone().into()),
            (Preparation::Prepared { drives: prep, dephase }, _) => {
                let prep = match sweep {
                    Sweep::Probe => *prep,
                    Sweep::Pump => shifted(prep, self.probe, delta, sweep),
                };
                *prepared_with(&self.diss, &prep, kv, *dephase)?.matrix()
            }
            (Preparation::Explicit(rho), _) => *rho.matrix(),
        };
        let mut b = -commutator_vec(&self.coupling, &rho0);
        // dL/dδ for a probe sweep: the probe ground level moves by −1
        let mut dh = Matrix4c::zeros();
        dh[(self.probe.ground_level(), self.probe.ground_level())] = C64::new(-1.0, 0.0);
        match solver {
            Ok(lu) => {
                b[TRACE_ROW] = C64::new(0.0, 0.0);
                let rho1 = lu.solve(&b);
                let ds = if slope {
                    let mut db = -commutator_vec(&dh, &unflatten(&rho1));
                    db[TRACE_ROW] = C64::new(0.0, 0.0);
                    self.normalize(lu.solve(&db)[eg])
                } else {
                    C64::new(0.0, 0.0)
                };
                Ok(NodeResponse { s: self.normalize(rho1[eg]), ds })
            }
            Err(_) => {
                // several stationary states: minimum-norm solution of the
                // full equation, accepted only if it is consistent. The SVD
                // is taken of the rescaled matrix, which it handles far more
                // accurately than entries of order 1e8.
                let m = *l0.matrix();
                let unit = l0.scale();
                let svd = (m / C64::new(unit, 0.0)).svd(true, true);
                let largest = unit * svd.singular_values.iter().cloned().fold(0.0, f64::max);
                let eps = 1e-10 * largest / unit;
                let solve = |rhs: &Vector16c| -> Result<Vector16c, ResponseError> {
                    let x = svd.solve(rhs, eps).map_err(|_| ResponseError::Inconsistent)? / C64::new(unit, 0.0);
                    let res = (m * x - rhs).camax();
                    if res > 1e-8 * (largest * x.camax() + rhs.camax()) {
                        return Err(ResponseError::Inconsistent);
                    }
                    Ok(x)
                };
                let rho1 = solve(&b)?;
                let ds = if slope {
                    let db = -commutator_vec(&dh, &unflatten(&rho1));
                    self.normalize(solve(&db)?[eg])
                } else {
                    C64::new(0.0, 0.0)
                };
                Ok(NodeResponse { s: self.normalize(rho1[eg]), ds })
            }
        }
    }

    /// Steady-state response with the probe on at amplitude `amp`.
    fn saturated(&self, delta: f64, sweep: Sweep, kv: f64, amp: f64) -> Result<C64, ResponseError> {
        let d = shifted(&self.bg.drives_without(self.probe), self.probe, delta, sweep)
            .with_rabi(self.probe.field(), C64::new(amp, 0.0));
        let l = build_liouvillian_with(&build_hamiltonian(&d, kv), &self.diss);
        let x = ConstrainedSolver::new(&l)?.stationary();
        Ok(self.normalize(x[vec_index(LEVEL_E, self.probe.ground_level())]) / amp)
    }

    fn finite_probe(&self, delta: f64, kv: f64) -> Result<C64, ResponseError> {
        if self.bg.preparation != Preparation::Stationary {
            return Err(ResponseError::FiniteProbeNeedsStationary);
        }
        let at = |amp: f64| self.saturated(delta, Sweep::Probe, kv, amp);
        let amp = FINITE_PROBE_FRACTION * self.gamma_e;
        let full = at(amp)?;
        let half = at(0.5 * amp)?;
        let relative = (full - half).norm() / full.norm().max(half.norm()).max(1e-300);
        if relative > 5e-3 {
            return Err(ResponseError::Linearity { relative });
        }
        Ok(full)
    }
}

/// Probe amplitude of the finite-probe method, as a fraction of Γ_e.
pub const FINITE_PROBE_FRACTION: f64 = 1e-3;

/// Weak-probe lineshape for one velocity class at probe two-photon offset δ.
pub fn weak_probe_response(
    bg: &BackgroundConfig,
    probe: Signal,
    delta: f64,
    velocity_detuning: f64,
    method: ResponseMethod,
) -> Result<C64, ResponseError> {
    let problem = Problem::new(bg, probe);
    match method {
        ResponseMethod::Perturbative => Ok(problem.node(delta, Sweep::Probe, velocity_detuning, false)?.s),
        ResponseMethod::FiniteProbe => problem.finite_probe(delta, velocity_detuning),
    }
}

/// Velocity rule for a background, widened to cover detuning offsets up to
/// `max_offset`.
pub fn velocity_rule(bg: &BackgroundConfig, doppler: Doppler, max_offset: f64) -> Result<VelocityRule, ResponseError> {
    let fwhm = bg.params.doppler_fwhm;
    Ok(match doppler {
        Doppler::Off => VelocityRule::stationary(),
        _ if fwhm == 0.0 => VelocityRule::stationary(),
        Doppler::Hermite(n) => VelocityRule::gauss_hermite(fwhm, n)?,
        Doppler::Resolved => {
            let p = &bg.params;
            let hw = 0.5 * p.gamma_e() + p.extra_optical_dephasing;
            let mut rabi = bg.drives.max_rabi();
            let mut centres: Vec<f64> = Field::ALL.iter().map(|&f| bg.drives.detuning(f)).collect();
            if let Preparation::Prepared { drives, .. } = &bg.preparation {
                rabi = rabi.max(drives.max_rabi());
                centres.extend(Field::ALL.iter().map(|&f| drives.detuning(f)));
            }
            let reach = 6.0 * hw + rabi + max_offset.abs();
            let features: Vec<Feature> = centres
                .into_iter()
                .map(|c| Feature { centre: c, half_width: hw, reach })
                .collect();
            VelocityRule::resolved(fwhm, &features)?
        }
    })
}

/// Doppler-averaged lineshape and its derivative in probe detuning.
pub fn averaged_response(
    bg: &BackgroundConfig,
    probe: Signal,
    delta: f64,
    rule: &VelocityRule,
) -> Result<(C64, C64), ResponseError> {
    let problem = Problem::new(bg, probe);
    let mut s = C64::new(0.0, 0.0);
    let mut ds = C64::new(0.0, 0.0);
    for (index, (v, w)) in rule.iter().enumerate() {
        let r = problem.node(delta, Sweep::Probe, v, true)?;
        if !(r.s.re.is_finite() && r.s.im.is_finite()) {
            return Err(QuadratureError::NonFinite { index, velocity: v }.into());
        }
        s += r.s * w;
        ds += r.ds * w;
    }
    Ok((s, ds))
}

/// Lineshape on a uniform grid of two-photon offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct LineshapeSpectrum {
    pub probe: Signal,
    pub delta: Vec<f64>,
    pub s: Vec<C64>,
    pub doppler_averaged: bool,
}

/// Uniform grid of `n` points over [−half_span, half_span].
pub fn symmetric_grid(half_span: f64, n: usize) -> Vec<f64> {
    let step = 2.0 * half_span / (n - 1) as f64;
    (0..n).map(|k| -half_span + k as f64 * step).collect()
}

/// Default grid for window studies: ±2π·2 MHz, 801 points.
pub fn default_window_grid() -> Vec<f64> {
    symmetric_grid(crate::units::hz_to_rad(2.0e6), 801)
}

pub fn check_grid(grid: &[f64]) -> Result<f64, ResponseError> {
    if grid.len() < 3 {
        return Err(ResponseError::InvalidGrid("need at least 3 points".into()));
    }
    if grid.iter().any(|d| !d.is_finite()) {
        return Err(ResponseError::InvalidGrid("non-finite detuning".into()));
    }
    let step = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if !(step > 0.0) {
        return Err(ResponseError::InvalidGrid("grid must be strictly increasing".into()));
    }
    for (k, pair) in grid.windows(2).enumerate() {
        let h = pair[1] - pair[0];
        if !(h > 0.0) {
            return Err(ResponseError::InvalidGrid(format!("not increasing at index {}", k + 1)));
        }
        if (h - step).abs() > 1e-6 * step {
            return Err(ResponseError::InvalidGrid(format!("non-uniform spacing at index {}", k + 1)));
        }
    }
    Ok(step)
}

/// Settings of a spectrum computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumOptions {
    pub doppler: Doppler,
    pub sweep: Sweep,
    /// `None`: weak-probe linear response. `Some(Ω)`: CW steady state with
    /// the probe present at Rabi frequency Ω, so that its own optical pumping
    /// is included; s is then the probe coherence divided by Ω.
    pub probe_rabi: Option<f64>,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions { doppler: Doppler::Resolved, sweep: Sweep::Probe, probe_rabi: None }
    }
}

/// Lineshape of `probe` over a probe-detuning grid.
pub fn lineshape_spectrum(
    bg: &BackgroundConfig,
    probe: Signal,
    grid: &[f64],
    doppler: Doppler,
) -> Result<LineshapeSpectrum, ResponseError> {
    lineshape_spectrum_with(bg, probe, grid, SpectrumOptions { doppler, ..Default::default() })
}

pub fn lineshape_spectrum_with(
    bg: &BackgroundConfig,
    probe: Signal,
    grid: &[f64],
    opts: SpectrumOptions,
) -> Result<LineshapeSpectrum, ResponseError> {
    check_grid(grid)?;
    if opts.probe_rabi.is_some() && bg.preparation != Preparation::Stationary {
        return Err(ResponseError::FiniteProbeNeedsStationary);
    }
    let max_offset = grid.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mut widened = bg.clone();
    if let Some(a) = opts.probe_rabi {
        widened.drives.set_rabi(probe.field(), C64::new(a, 0.0));
    }
    let rule = velocity_rule(&widened, opts.doppler, max_offset)?;
    let problem = Problem::new(bg, probe);
    let s = grid
        .par_iter()
        .map(|&delta| {
            let mut acc = C64::new(0.0, 0.0);
            for (index, (v, w)) in rule.iter().enumerate() {
                let s = match opts.probe_rabi {
                    None => problem.node(delta, opts.sweep, v, false)?.s,
                    Some(a) => problem.saturated(delta, opts.sweep, v, a)?,
                };
                if !(s.re.is_finite() && s.im.is_finite()) {
                    return Err(QuadratureError::NonFinite { index, velocity: v }.into());
                }
                acc += s * w;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<C64>, ResponseError>>()?;
    Ok(LineshapeSpectrum {
        probe,
        delta: grid.to_vec(),
        s,
        doppler_averaged: opts.doppler.is_on() && rule.len() > 1,
    })
}

impl LineshapeSpectrum {
    /// CSV with columns delta_hz, re_s, im_s, transmission, preceded by
    /// `header` lines (each written as a `#` comment).
    pub fn to_csv(&self, od: f64, header: &[String]) -> String {
        let t = transmission(self, od).unwrap_or_else(|_| vec![f64::NAN; self.s.len()]);
        let mut out = String::new();
        for line in header {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("delta_hz,re_s,im_s,transmission\n");
        for ((d, s), t) in self.delta.iter().zip(&self.s).zip(&t) {
            let _ = writeln!(out, "{:.9e},{:.12e},{:.12e},{:.12e}", rad_to_hz(*d), s.re, s.im, t);
        }
        out
    }
}

/// Intensity transmission exp(−od·Re s) on the spectrum grid.
pub fn transmission(spec: &LineshapeSpectrum, od: f64) -> Result<Vec<f64>, ResponseError> {
    if !(od >= 0.0) || !od.is_finite() {
        return Err(ResponseError::BadOpticalDepth(od));
    }
    Ok(spec.s.iter().map(|s| (-od * s.re).exp()).collect())
}

/// An interior maximum of a transmission trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    /// Index of the peak (first point of a flat top).
    pub index: usize,
    pub peak: f64,
    /// Height above the higher of the two minima that enclose it.
    pub prominence: f64,
}

/// Every interior local maximum with lower points on both sides, sorted by
/// decreasing prominence.
pub fn find_windows(t: &[f64]) -> Vec<Window> {
    let n = t.len();
    let mut out = Vec::new();
    let mut k = 1;
    while k + 1 < n {
        // extent of a plateau starting at k
        let mut end = k;
        while end + 1 < n && t[end + 1] == t[k] {
            end += 1;
        }
        if end + 1 < n && t[k - 1] < t[k] && t[end + 1] < t[k] {
            // walk outwards only until a higher point appears
            let prominence = (t[k] - walk_min(t[..k].iter().rev(), t[k]))
                .min(t[k] - walk_min(t[end + 1..].iter(), t[k]));
            out.push(Window { index: k, peak: t[k], prominence });
        }
        k = end + 1;
    }
    out.sort_by(|a, b| b.prominence.partial_cmp(&a.prominence).unwrap_or(std::cmp::Ordering::Equal));
    out
}

fn walk_min<'a>(it: impl Iterator<Item = &'a f64>, peak: f64) -> f64 {
    let mut m = f64::INFINITY;
    for &v in it {
        if v > peak {
            break;
        }
        m = m.min(v);
    }
    m
}

/// Window peak minus the absorption floor (global minimum).
pub fn transparency_contrast(t: &[f64]) -> Result<f64, ResponseError> {
    let w = find_windows(t).into_iter().next().ok_or(ResponseError::NoWindow)?;
    let floor = t.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(w.peak - floor)
}

/// Group delay (od/2)·d(Im s)/dδ at grid point δ₀, central difference with a
/// Richardson step when the ±2 neighbours exist.
pub fn group_delay(spec: &LineshapeSpectrum, od: f64, delta0: f64) -> Result<f64, ResponseError> {
    if !(od >= 0.0) || !od.is_finite() {
        return Err(ResponseError::BadOpticalDepth(od));
    }
    let step = check_grid(&spec.delta)?;
    let pos = (delta0 - spec.delta[0]) / step;
    let k = pos.round();
    if (pos - k).abs() > 1e-6 || k < 1.0 || k as usize + 1 >= spec.delta.len() {
        return Err(ResponseError::EdgeOfGrid(delta0));
    }
    let k = k as usize;
    let im = |j: usize| spec.s[j].im;
    let d1 = (im(k + 1) - im(k - 1)) / (2.0 * step);
    let slope = if k >= 2 && k + 2 < spec.delta.len() {
        let d2 = (im(k + 2) - im(k - 2)) / (4.0 * step);
        (4.0 * d1 - d2) / 3.0
    } else {
        d1
    };
    Ok(0.5 * od * slope)
}

/// Group delay from the exact slope of the averaged response at δ₀.
pub fn analytic_group_delay(
    bg: &BackgroundConfig,
    probe: Signal,
    od: f64,
    delta0: f64,
    doppler: Doppler,
) -> Result<f64, ResponseError> {
    if !(od >= 0.0) || !od.is_finite() {
        return Err(ResponseError::BadOpticalDepth(od));
    }
    let rule = velocity_rule(bg, doppler, delta0.abs())?;
    let (_, ds) = averaged_response(bg, probe, delta0, &rule)?;
    Ok(0.5 * od * ds.im)
}

/// Window-centre group delay with the default Hermite rule.
pub fn window_group_delay(bg: &BackgroundConfig, probe: Signal, od: f64) -> Result<f64, ResponseError> {
    analytic_group_delay(bg, probe, od, 0.0, Doppler::Hermite(DEFAULT_HERMITE_NODES))
}

/// v_g = L / (L/c + τ).
pub fn group_velocity(tau: f64, cell_length: f64) -> Result<f64, ResponseError> {
    let denom = cell_length / SPEED_OF_LIGHT + tau;
    if !(denom > 0.0) {
        return Err(ResponseError::Superluminal { tau, length: cell_length });
    }
    Ok(cell_length / denom)
}
