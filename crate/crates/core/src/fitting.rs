//! Least-squares estimation of medium parameters from tabulated observables
//! with a bounded Nelder–Mead simplex in log-parameter space.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::maxwell_bloch::{group_velocities, PropagationError};
use crate::params::{validate_params, DriveConfig, ParamError, Signal, TripodParams};
use crate::quadrature::DEFAULT_HERMITE_NODES;
use crate::response::{averaged_response, velocity_rule, BackgroundConfig, Doppler, ResponseError};
use crate::units::hz_to_rad;

pub const MIN_ROWS: usize = 4;
pub const MAX_FREE: usize = 8;
pub const DEFAULT_MAX_ITERATIONS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("forward model failed at x = {x:.6e}: {message}")]
    Forward { x: f64, message: String },
    #[error("unknown fit parameter `{0}`")]
    UnknownParameter(String),
    #[error("{0} free parameters requested, at most {MAX_FREE} supported")]
    TooManyParameters(usize),
    #[error("parameter {name}: bounds [{lo:.4e}, {hi:.4e}] do not contain initial value {value:.4e}")]
    Bounds { name: &'static str, lo: f64, hi: f64, value: f64 },
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// What a dataset measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    /// Window-centre group velocity (m/s) of `signal` against the power
    /// (W) of a preparation on `preparation`.
    GroupVelocity { signal: Signal, preparation: Signal },
    /// Doppler-averaged weak-probe transmission of `signal` against probe
    /// detuning (rad/s), with the other signal present at `background` W.
    Transmission { signal: Signal, background: f64 },
}

impl Observable {
    pub fn kind(&self) -> &'static str {
        match self {
            Observable::GroupVelocity { .. } => "group-velocity-vs-preparation-power",
            Observable::Transmission { .. } => "transmission-spectrum",
        }
    }

    /// CSV column names (x, y, uncertainty).
    pub fn columns(&self) -> [&'static str; 3] {
        match self {
            Observable::GroupVelocity { .. } => ["power_W", "group_velocity_m_per_s", "sigma_m_per_s"],
            Observable::Transmission { .. } => ["detuning_Hz", "transmission", "sigma"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub x: f64,
    pub y: f64,
    pub sigma: Option<f64>,
}

/// Rows are kept sorted by x.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observable: Observable,
    rows: Vec<Row>,
}

impl Dataset {
    pub fn new(observable: Observable, mut rows: Vec<Row>) -> Result<Self, FitError> {
        let bad = |m: String| Err(FitError::Dataset(m));
        if rows.len() < MIN_ROWS {
            return bad(format!("need at least {MIN_ROWS} rows, got {}", rows.len()));
        }
        for r in &rows {
            if !r.x.is_finite() || !r.y.is_finite() {
                return bad(format!("non-finite row ({}, {})", r.x, r.y));
            }
            if let Some(s) = r.sigma {
                if !(s > 0.0) || !s.is_finite() {
                    return bad(format!("uncertainty {s} at x = {} must be positive", r.x));
                }
            }
        }
        if rows.iter().any(|r| r.sigma.is_some()) && rows.iter().any(|r| r.sigma.is_none()) {
            return bad("uncertainties must be given for every row or none".into());
        }
        rows.sort_by(|a, b| a.x.total_cmp(&b.x));
        if let Some(w) = rows.windows(2).find(|w| w[0].x == w[1].x) {
            return bad(format!("repeated abscissa {}", w[0].x));
        }
        if let Observable::Transmission { background, .. } = observable {
            if !(background >= 0.0) {
                return bad(format!("background power {background} must be >= 0"));
            }
        }
        Ok(Dataset { observable, rows })
    }

    pub fn observable(&self) -> Observable {
        self.observable
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    /// Parse the CSV form written by [`Dataset::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, FitError> {
        let mut kind = None;
        let mut signal = None;
        let mut preparation = None;
        let mut background = 0.0;
        let mut header: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let perr = |message: String| FitError::Parse { line: k + 1, message };
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let Some((key, value)) = meta.split_once(':') else { continue };
                let value = value.trim();
                match key.trim() {
                    "observable" => kind = Some(value.to_string()),
                    "signal" => signal = Some(value.parse::<Signal>().map_err(|e| perr(e.to_string()))?),
                    "preparation" => preparation = Some(value.parse::<Signal>().map_err(|e| perr(e.to_string()))?),
                    "background_power_W" => {
                        background = value.parse().map_err(|_| perr(format!("bad background power `{value}`")))?
                    }
                    _ => {}
                }
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if header.is_none() {
                header = Some(cells.iter().map(|c| c.to_string()).collect());
                continue;
            }
            let ncol = header.as_ref().map_or(0, Vec::len);
            if cells.len() != ncol {
                return Err(perr(format!("expected {ncol} columns, got {}", cells.len())));
            }
            let num = |c: &str| c.parse::<f64>().map_err(|_| perr(format!("not a number: `{c}`")));
            rows.push(Row { x: num(cells[0])?, y: num(cells[1])?, sigma: cells.get(2).map(|c| num(c)).transpose()? });
        }
        let kind = kind.ok_or_else(|| FitError::Dataset("missing `# observable:` line".into()))?;
        let signal = signal.ok_or_else(|| FitError::Dataset("missing `# signal:` line".into()))?;
        let observable = match kind.as_str() {
            "group-velocity-vs-preparation-power" => Observable::GroupVelocity {
                signal,
                preparation: preparation.ok_or_else(|| FitError::Dataset("missing `# preparation:` line".into()))?,
            },
            "transmission-spectrum" => Observable::Transmission { signal, background },
            other => return Err(FitError::Dataset(format!("unknown observable `{other}`"))),
        };
        let header = header.ok_or_else(|| FitError::Dataset("no column header".into()))?;
        let want = observable.columns();
        if header.len() < 2 || header.len() > 3 || header.iter().zip(want).any(|(h, w)| h != w) {
            return Err(FitError::Dataset(format!("columns must be {}, got {}", want.join(","), header.join(","))));
        }
        // transmission abscissae are stored in Hz
        if let Observable::Transmission { .. } = observable {
            rows.iter_mut().for_each(|r| r.x = hz_to_rad(r.x));
        }
        Dataset::new(observable, rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# observable: {}", self.observable.kind());
        match self.observable {
            Observable::GroupVelocity { signal, preparation } => {
                let _ = writeln!(out, "# signal: {signal}\n# preparation: {preparation}");
            }
            Observable::Transmission { signal, background } => {
                let _ = writeln!(out, "# signal: {signal}\n# background_power_W: {background:e}");
            }
        }
        let cols = self.observable.columns();
        let weighted = self.rows[0].sigma.is_some();
        let _ = writeln!(out, "{}", if weighted { cols.join(",") } else { cols[..2].join(",") });
        let to_x = |x: f64| match self.observable {
            Observable::Transmission { .. } => crate::units::rad_to_hz(x),
            Observable::GroupVelocity { .. } => x,
        };
        for r in &self.rows {
            let _ = write!(out, "{:.12e},{:.12e}", to_x(r.x), r.y);
            if let Some(s) = r.sigma {
                let _ = write!(out, ",{s:.12e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Tunable medium parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitParameter {
    GammaHz,
    GammaHp,
    GammaZp,
    ExchangeG,
    OpticalDepthZ,
    OpticalDepthH,
    RabiCalibrationKappa,
    DopplerFwhm,
}

impl FitParameter {
    pub const ALL: [FitParameter; 8] = [
        FitParameter::GammaHz,
        FitParameter::GammaHp,
        FitParameter::GammaZp,
        FitParameter::ExchangeG,
        FitParameter::OpticalDepthZ,
        FitParameter::OpticalDepthH,
        FitParameter::RabiCalibrationKappa,
        FitParameter::DopplerFwhm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FitParameter::GammaHz => "gamma_hz",
            FitParameter::GammaHp => "gamma_hp",
            FitParameter::GammaZp => "gamma_zp",
            FitParameter::ExchangeG => "exchange_g",
            FitParameter::OpticalDepthZ => "optical_depth_z",
            FitParameter::OpticalDepthH => "optical_depth_h",
            FitParameter::RabiCalibrationKappa => "rabi_calibration_kappa",
            FitParameter::DopplerFwhm => "doppler_fwhm",
        }
    }

    pub fn get(self, p: &TripodParams) -> f64 {
        match self {
            FitParameter::GammaHz => p.gamma_hz,
            FitParameter::GammaHp => p.gamma_hp,
            FitParameter::GammaZp => p.gamma_zp,
            FitParameter::ExchangeG => p.exchange_g,
            FitParameter::OpticalDepthZ => p.optical_depth_z,
            FitParameter::OpticalDepthH => p.optical_depth_h,
            FitParameter::RabiCalibrationKappa => p.rabi_calibration_kappa,
            FitParameter::DopplerFwhm => p.doppler_fwhm,
        }
    }

    pub fn set(self, p: &mut TripodParams, value: f64) {
        let slot = match self {
            FitParameter::GammaHz => &mut p.gamma_hz,
            FitParameter::GammaHp => &mut p.gamma_hp,
            FitParameter::GammaZp => &mut p.gamma_zp,
            FitParameter::ExchangeG => &mut p.exchange_g,
            FitParameter::OpticalDepthZ => &mut p.optical_depth_z,
            FitParameter::OpticalDepthH => &mut p.optical_depth_h,
            FitParameter::RabiCalibrationKappa => &mut p.rabi_calibration_kappa,
            FitParameter::DopplerFwhm => &mut p.doppler_fwhm,
        };
        *slot = value;
    }
}

impl fmt::Display for FitParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FitParameter {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FitParameter::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| FitError::UnknownParameter(s.to_string()))
    }
}

/// Fixed experimental settings the forward model needs besides the medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardModel {
    /// W; converted with the candidate κ so the pump tracks the calibration.
    pub pump_power: f64,
    pub pump_detuning: f64,
}

impl ForwardModel {
    fn pump(&self, p: &TripodParams) -> Result<DriveConfig, ParamError> {
        let rabi = crate::params::rabi_from_power(self.pump_power, p.rabi_calibration_kappa)?;
        Ok(DriveConfig::pump_only(rabi).with_detuning(crate::params::Field::Pump, self.pump_detuning))
    }

    /// Model values at every row of the dataset.
    pub fn evaluate(&self, p: &TripodParams, data: &Dataset) -> Result<Vec<f64>, FitError> {
        let pump = self.pump(p)?;
        let fail = |x: f64, e: &dyn fmt::Display| FitError::Forward { x, message: e.to_string() };
        match data.observable {
            Observable::GroupVelocity { signal, preparation } => data
                .rows
                .par_iter()
                .map(|r| {
                    let v = group_velocities(p, &pump, preparation, r.x).map_err(|e: PropagationError| fail(r.x, &e))?;
                    Ok(v[if signal == Signal::Zeeman { 0 } else { 1 }])
                })
                .collect(),
            Observable::Transmission { signal, background } => {
                let mut drives = pump;
                let rabi = crate::params::rabi_from_power(background, p.rabi_calibration_kappa)?;
                drives.set_rabi(signal.other().field(), crate::C64::new(rabi, 0.0));
                let bg = BackgroundConfig::new(*p, drives);
                let rule = velocity_rule(&bg, Doppler::Hermite(DEFAULT_HERMITE_NODES), 0.0)
                    .map_err(|e: ResponseError| fail(data.rows[0].x, &e))?;
                let od = signal.optical_depth(p);
                data.rows
                    .par_iter()
                    .map(|r| {
                        let (s, _) = averaged_response(&bg, signal, r.x, &rule).map_err(|e| fail(r.x, &e))?;
                        Ok((-od * s.re).exp())
                    })
                    .collect()
            }
        }
    }
}

/// model(x_i) − y_i, divided by σ_i when given; datasets concatenated.
pub fn residuals(p: &TripodParams, data: &[Dataset], model: &ForwardModel) -> Result<Vec<f64>, FitError> {
    let mut out = Vec::new();
    for d in data {
        let m = model.evaluate(p, d)?;
        out.extend(d.rows.iter().zip(m).map(|(r, v)| (v - r.y) / r.sigma.unwrap_or(1.0)));
    }
    Ok(out)
}

pub fn objective(res: &[f64]) -> f64 {
    res.iter().map(|r| r * r).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub parameter: FitParameter,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Initial simplex edge in ln(parameter).
    pub initial_step: f64,
    /// Simplex diameter (in ln-parameter, i.e. relative) below which to stop.
    pub x_tolerance: f64,
    /// Objective spread, relative to Σ (y/σ)², below which to stop.
    pub f_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iterations: DEFAULT_MAX_ITERATIONS, initial_step: 0.5, x_tolerance: 1e-6, f_tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: TripodParams,
    pub free: Vec<(FitParameter, f64)>,
    pub objective: f64,
    pub initial_objective: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl FitResult {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (p, v) in &self.free {
            let _ = writeln!(out, "{p} = {v:.12e}");
        }
        let _ = writeln!(out, "objective = {:.12e}", self.objective);
        let _ = writeln!(out, "initial_objective = {:.12e}", self.initial_objective);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "evaluations = {}", self.evaluations);
        let _ = writeln!(out, "converged = {}", self.converged);
        out
    }

    /// `dataset,x,y,model,residual` with x in the dataset's file units.
    pub fn residuals_csv(&self, data: &[Dataset], header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("dataset,x,y,model,residual\n");
        let mut k = 0;
        for (i, d) in data.iter().enumerate() {
            for r in &d.rows {
                let x = match d.observable {
                    Observable::Transmission { .. } => crate::units::rad_to_hz(r.x),
                    Observable::GroupVelocity { .. } => r.x,
                };
                let res = self.residuals[k];
                let model = r.y + res * r.sigma.unwrap_or(1.0);
                let _ = writeln!(out, "{i},{x:.12e},{:.12e},{model:.12e},{res:.12e}", r.y);
                k += 1;
            }
        }
        out
    }
}

/// Fold u into [lo, hi] by reflecting at the walls.
fn reflect(u: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let w = hi - lo;
    let m = (u - lo).rem_euclid(2.0 * w);
    lo + if m > w { 2.0 * w - m } else { m }
}

/// Bounded Nelder–Mead on ln(parameter).
pub fn fit(
    data: &[Dataset],
    model: &ForwardModel,
    initial: &TripodParams,
    bounds: &[Bound],
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let n = bounds.len();
    if n == 0 || n > MAX_FREE {
        return Err(FitError::TooManyParameters(n));
    }
    if data.is_empty() {
        return Err(FitError::Dataset("no datasets".into()));
    }
    for b in bounds {
        let v = b.parameter.get(initial);
        if !(b.lo > 0.0) || !(b.lo <= v && v <= b.hi) {
            return Err(FitError::Bounds { name: b.parameter.name(), lo: b.lo, hi: b.hi, value: v });
        }
    }
    validate_params(*initial)?;
    let lo: Vec<f64> = bounds.iter().map(|b| b.lo.ln()).collect();
    let hi: Vec<f64> = bounds.iter().map(|b| b.hi.ln()).collect();
    let place = |u: &[f64]| -> TripodParams {
        let mut p = *initial;
        for (k, b) in bounds.iter().enumerate() {
            b.parameter.set(&mut p, u[k].exp());
        }
        p
    };
    let scale: f64 = data.iter().flat_map(|d| &d.rows).map(|r| (r.y / r.sigma.unwrap_or(1.0)).powi(2)).sum::<f64>();
    let scale = scale.max(f64::MIN_POSITIVE);
    let eval = |u: &[f64]| -> Result<f64, FitError> { Ok(objective(&residuals(&place(u), data, model)?)) };

    let u0: Vec<f64> = bounds.iter().map(|b| b.parameter.get(initial).ln()).collect();
    let f0 = eval(&u0)?;
    let mut simplex: Vec<Vec<f64>> = vec![u0.clone()];
    for k in 0..n {
        let mut v = u0.clone();
        // step inward from whichever wall is nearer
        let step = if v[k] + opts.initial_step <= hi[k] { opts.initial_step } else { -opts.initial_step };
        v[k] = reflect(v[k] + step, lo[k], hi[k]);
        simplex.push(v);
    }
    let mut values: Vec<f64> = std::iter::once(Ok(f0))
        .chain(simplex[1..].par_iter().map(|v| eval(v)).collect::<Vec<_>>())
        .collect::<Result<_, _>>()?;
    let mut evaluations = n + 1;
    let mut iterations = 0;
    let mut converged = false;

    let fold = |u: Vec<f64>| -> Vec<f64> { u.iter().enumerate().map(|(k, x)| reflect(*x, lo[k], hi[k])).collect() };
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };

    while iterations < opts.max_iterations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < opts.x_tolerance && (values[n] - values[0]) <= opts.f_tolerance * scale {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> =
            (0..n).map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let xr = fold(combine(&centroid, &worst, -1.0));
        let fr = eval(&xr)?;
        evaluations += 1;
        if fr < values[0] {
            let xe = fold(combine(&centroid, &worst, -2.0));
            let fe = eval(&xe)?;
            evaluations += 1;
            (simplex[n], values[n]) = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < values[n - 1] {
            (simplex[n], values[n]) = (xr, fr);
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = fold(combine(&centroid, &xr, 0.5));
                let fc = eval(&xc)?;
                (xc, fc)
            } else {
                let xc = fold(combine(&centroid, &worst, 0.5));
                let fc = eval(&xc)?;
                (xc, fc)
            };
            evaluations += 1;
            if fc < values[n].min(fr) {
                (simplex[n], values[n]) = (xc, fc);
            } else {
                let best = simplex[0].clone();
                let shrunk: Vec<Vec<f64>> = simplex[1..].iter().map(|v| combine(&best, v, 0.5)).collect();
                let fs = shrunk.par_iter().map(|v| eval(v)).collect::<Result<Vec<_>, _>>()?;
                evaluations += n;
                for (k, (v, f)) in shrunk.into_iter().zip(fs).enumerate() {
                    simplex[k + 1] = v;
                    values[k + 1] = f;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))).expect("simplex is non-empty");
    let (u, f) = if values[best] <= f0 { (simplex[best].clone(), values[best]) } else { (u0, f0) };
    let params = place(&u);
    let res = residuals(&params, data, model)?;
    Ok(FitResult {
        params,
        free: bounds.iter().map(|b| (b.parameter, b.parameter.get(&params))).collect(),
        objective: f,
        initial_objective: f0,
        residuals: res,
        iterations,
        evaluations,
        converged,
    })
}
