//! Figure-level computations shared by the command line and the acceptance
//! suite: dual-window spectra, contrast and group-velocity sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::maxwell_bloch::{group_velocities, preparation_background, PreparationStep, PropagationError};
use crate::params::{rabi_from_power, DriveConfig, Signal, TripodParams};
use crate::response::{
    find_windows, lineshape_spectrum_with, symmetric_grid, transmission, window_group_delay, BackgroundConfig,
    Doppler, LineshapeSpectrum, ResponseError, SpectrumOptions, Sweep, Window,
};
use crate::units::{hz_to_rad, rad_to_hz};
use crate::C64;

fn push_header(out: &mut String, header: &[String]) {
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
}

/// Pump-frequency sweep with both signals on, each detuned from its line.
#[derive(Debug, Clone, PartialEq)]
pub struct DeitSettings {
    pub half_span: f64,
    pub points: usize,
    /// Power of each signal (W); both act as finite probes.
    pub signal_power: f64,
    pub zeeman_detuning: f64,
    pub hyperfine_detuning: f64,
    pub doppler: Doppler,
}

impl Default for DeitSettings {
    fn default() -> Self {
        DeitSettings {
            half_span: hz_to_rad(20e6),
            points: 401,
            signal_power: 50e-6,
            zeeman_detuning: hz_to_rad(8e6),
            hyperfine_detuning: hz_to_rad(-8e6),
            doppler: Doppler::Resolved,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeitSpectra {
    pub settings: DeitSettings,
    /// Zeeman, hyperfine.
    pub spectra: [LineshapeSpectrum; 2],
    pub transmission: [Vec<f64>; 2],
}

pub fn deit_spectra(p: &TripodParams, pump: &DriveConfig, s: &DeitSettings) -> Result<DeitSpectra, ResponseError> {
    let grid = symmetric_grid(s.half_span, s.points);
    let rabi = rabi_from_power(s.signal_power, p.rabi_calibration_kappa)?;
    let base = pump
        .with_detuning(Signal::Zeeman.field(), s.zeeman_detuning)
        .with_detuning(Signal::Hyperfine.field(), s.hyperfine_detuning);
    let one = |probe: Signal| -> Result<(LineshapeSpectrum, Vec<f64>), ResponseError> {
        let bg = BackgroundConfig::new(*p, base.with_rabi(probe.other().field(), C64::new(rabi, 0.0)));
        let opts = SpectrumOptions { doppler: s.doppler, sweep: Sweep::Pump, probe_rabi: (rabi > 0.0).then_some(rabi) };
        let spec = lineshape_spectrum_with(&bg, probe, &grid, opts)?;
        let t = transmission(&spec, probe.optical_depth(p))?;
        Ok((spec, t))
    };
    let (z, h) = (one(Signal::Zeeman)?, one(Signal::Hyperfine)?);
    Ok(DeitSpectra { settings: s.clone(), spectra: [z.0, h.0], transmission: [z.1, h.1] })
}

impl DeitSpectra {
    /// Pump shift at which `signal` is in two-photon resonance with the pump.
    pub fn resonance(&self, signal: Signal) -> f64 {
        -match signal {
            Signal::Zeeman => self.settings.zeeman_detuning,
            Signal::Hyperfine => self.settings.hyperfine_detuning,
        }
    }

    /// The window of `signal` closest to its two-photon resonance.
    pub fn own_window(&self, signal: Signal) -> Option<Window> {
        let k = if signal == Signal::Zeeman { 0 } else { 1 };
        let grid = &self.spectra[k].delta;
        let target = self.resonance(signal);
        find_windows(&self.transmission[k])
            .into_iter()
            .min_by(|a, b| (grid[a.index] - target).abs().total_cmp(&(grid[b.index] - target).abs()))
    }

    pub fn to_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        push_header(&mut out, header);
        out.push_str(DEIT_COLUMNS);
        out.push('\n');
        let [z, h] = &self.spectra;
        for k in 0..z.delta.len() {
            let _ = writeln!(
                out,
                "{:.9e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                rad_to_hz(z.delta[k]),
                z.s[k].re,
                z.s[k].im,
                self.transmission[0][k],
                h.s[k].re,
                h.s[k].im,
                self.transmission[1][k]
            );
        }
        out
    }
}

pub const DEIT_COLUMNS: &str =
    "pump_shift_hz,zeeman_re_s,zeeman_im_s,zeeman_transmission,hyperfine_re_s,hyperfine_im_s,hyperfine_transmission";

/// Probe spectra around two-photon resonance for a sweep of the other
/// signal's power.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSettings {
    pub probe: Signal,
    pub background_powers: Vec<f64>,
    pub half_span: f64,
    pub points: usize,
    pub probe_power: f64,
    pub doppler: Doppler,
}

impl ContrastSettings {
    pub fn paper(probe: Signal) -> Self {
        ContrastSettings {
            probe,
            background_powers: [5.0, 20.0, 40.0, 60.0, 80.0, 100.0, 125.0, 150.0].iter().map(|u| u * 1e-6).collect(),
            half_span: hz_to_rad(2e6),
            points: 101,
            probe_power: 50e-6,
            doppler: Doppler::Resolved,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastPoint {
    pub background_power: f64,
    /// Window peak minus the trace minimum (0 when no window is found).
    pub contrast: f64,
    pub peak: f64,
    /// Transmission at exact two-photon resonance.
    pub center: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSweep {
    pub settings: ContrastSettings,
    pub detuning: Vec<f64>,
    pub points: Vec<ContrastPoint>,
    pub transmission: Vec<Vec<f64>>,
}

pub fn contrast_sweep(p: &TripodParams, pump: &DriveConfig, s: &ContrastSettings) -> Result<ContrastSweep, ResponseError> {
    let grid = symmetric_grid(s.half_span, s.points);
    let probe_rabi = rabi_from_power(s.probe_power, p.rabi_calibration_kappa)?;
    let rows = s
        .background_powers
        .par_iter()
        .map(|&power| {
            let other = rabi_from_power(power, p.rabi_calibration_kappa)?;
            let bg = BackgroundConfig::new(*p, pump.with_rabi(s.probe.other().field(), C64::new(other, 0.0)));
            let opts = SpectrumOptions {
                doppler: s.doppler,
                sweep: Sweep::Probe,
                probe_rabi: (probe_rabi > 0.0).then_some(probe_rabi),
            };
            let spec = lineshape_spectrum_with(&bg, s.probe, &grid, opts)?;
            let t = transmission(&spec, s.probe.optical_depth(p))?;
            let floor = t.iter().cloned().fold(f64::INFINITY, f64::min);
            let mid = grid.len() / 2;
            // window nearest the two-photon resonance
            let w = find_windows(&t).into_iter().min_by_key(|w| w.index.abs_diff(mid));
            let (contrast, peak) = w.map_or((0.0, f64::NAN), |w| (w.peak - floor, w.peak));
            Ok((ContrastPoint { background_power: power, contrast, peak, center: t[mid] }, t))
        })
        .collect::<Result<Vec<_>, ResponseError>>()?;
    let (points, transmission) = rows.into_iter().unzip();
    Ok(ContrastSweep { settings: s.clone(), detuning: grid, points, transmission })
}

impl ContrastSweep {
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        push_header(&mut out, header);
        out.push_str(CONTRAST_COLUMNS);
        out.push('\n');
        for c in &self.points {
            let _ = writeln!(
                out,
                "{},{:.6e},{:.12e},{:.12e},{:.12e}",
                self.settings.probe, c.background_power, c.contrast, c.peak, c.center
            );
        }
        out
    }

    pub fn spectra_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        push_header(&mut out, header);
        out.push_str(CONTRAST_SPECTRA_COLUMNS);
        out.push('\n');
        for (c, t) in self.points.iter().zip(&self.transmission) {
            for (d, v) in self.detuning.iter().zip(t) {
                let _ = writeln!(out, "{},{:.6e},{:.9e},{:.12e}", self.settings.probe, c.background_power, rad_to_hz(*d), v);
            }
        }
        out
    }
}

pub const CONTRAST_COLUMNS: &str = "probe,background_power_W,contrast,peak_transmission,center_transmission";
pub const CONTRAST_SPECTRA_COLUMNS: &str = "probe,background_power_W,delta_hz,transmission";

/// Window-centre group velocities against preparation power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupVelocityPoint {
    pub power: f64,
    /// Zeeman, hyperfine; m/s.
    pub velocity: [f64; 2],
}

pub fn group_velocity_sweep(
    p: &TripodParams,
    pump: &DriveConfig,
    field: Signal,
    powers: &[f64],
) -> Result<Vec<GroupVelocityPoint>, PropagationError> {
    powers
        .par_iter()
        .map(|&power| Ok(GroupVelocityPoint { power, velocity: group_velocities(p, pump, field, power)? }))
        .collect()
}

pub fn group_velocity_csv(points: &[GroupVelocityPoint], cell_length: f64, header: &[String]) -> String {
    let mut out = String::new();
    push_header(&mut out, header);
    out.push_str(GROUP_VELOCITY_COLUMNS);
    out.push('\n');
    for g in points {
        let [vz, vh] = g.velocity;
        let _ = writeln!(
            out,
            "{:.6e},{:.9e},{:.9e},{:.9e},{:.9e}",
            g.power,
            vz,
            vh,
            cell_length / vz,
            cell_length / vh
        );
    }
    out
}

pub const GROUP_VELOCITY_COLUMNS: &str =
    "preparation_power_W,v_zeeman_m_per_s,v_hyperfine_m_per_s,delay_zeeman_s,delay_hyperfine_s";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhancementPoint {
    pub power: f64,
    pub factor: f64,
    /// Hyperfine group delay with the preparation, s.
    pub delay: f64,
}

/// Hyperfine delay against Zeeman preparation power, relative to none.
pub fn delay_enhancement_sweep(
    p: &TripodParams,
    pump: &DriveConfig,
    powers: &[f64],
    duration: f64,
) -> Result<Vec<EnhancementPoint>, PropagationError> {
    if !(duration > 0.0) {
        return Err(PropagationError::Protocol(format!("preparation duration {duration} must be > 0")));
    }
    let od = p.optical_depth_h;
    let base = window_group_delay(&preparation_background(p, pump, None)?, Signal::Hyperfine, od)?;
    powers
        .par_iter()
        .map(|&power| {
            let prep = PreparationStep { field: Signal::Zeeman, power, duration };
            let delay = window_group_delay(&preparation_background(p, pump, Some(&prep))?, Signal::Hyperfine, od)?;
            Ok(EnhancementPoint { power, factor: delay / base, delay })
        })
        .collect()
}

pub fn enhancement_csv(points: &[EnhancementPoint], header: &[String]) -> String {
    let mut out = String::new();
    push_header(&mut out, header);
    out.push_str(ENHANCEMENT_COLUMNS);
    out.push('\n');
    for e in points {
        let _ = writeln!(out, "{:.6e},{:.9e},{:.9e}", e.power, e.factor, e.delay);
    }
    out
}

pub const ENHANCEMENT_COLUMNS: &str = "preparation_power_W,enhancement_factor,delay_hyperfine_s";
