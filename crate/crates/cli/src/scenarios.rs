use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use deit_core::config::{describe_params, Config, ConfigError};
use deit_core::experiments::{
    contrast_sweep, deit_spectra, delay_enhancement_sweep, enhancement_csv, group_velocity_csv, group_velocity_sweep,
    ContrastSettings, DeitSettings,
};
use deit_core::fitting::{fit, Bound, Dataset, FitError, FitOptions, FitParameter, ForwardModel, Observable};
use deit_core::maxwell_bloch::{
    match_group_velocities, preparation_background, propagate, pulse_delays, storage_run, GaussianPulse, GridSpec,
    PreparationStep, PropagationError, StorageProtocol, DEFAULT_PULSE_FWHM, DEFAULT_RAMP,
};
use deit_core::params::{rabi_from_power, DriveConfig, Field, ParamError, Signal, TripodParams, REFERENCE_PUMP_POWER};
use deit_core::quadrature::PROPAGATION_NODES;
use deit_core::response::{window_group_delay, Doppler, ResponseError};
use deit_core::units::{hz_to_rad, Dimension, SPEED_OF_LIGHT};
use deit_core::C64;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    SpectrumDeit,
    ContrastVsPower,
    GroupvelVsPower,
    Match,
    Propagate,
    Store,
    DelayEnhancement,
    FitGroupvel,
}

impl Scenario {
    pub fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ParamError> for Failure {
    fn from(e: ParamError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ResponseError> for Failure {
    fn from(e: ResponseError) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<PropagationError> for Failure {
    fn from(e: PropagationError) -> Self {
        match e {
            PropagationError::Protocol(_)
            | PropagationError::Grid(_)
            | PropagationError::StepTooLarge { .. }
            | PropagationError::ZStepTooLarge { .. } => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<FitError> for Failure {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Forward { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

type Outputs = Vec<(String, String)>;

struct Context<'a> {
    scenario: Scenario,
    cfg: &'a Config,
    config_path: &'a Path,
    params: TripodParams,
    pump_power: f64,
    pump: DriveConfig,
}

impl Context<'_> {
    fn header(&self, extra: &[String]) -> Vec<String> {
        let mut h = vec![
            format!("deit {}", env!("CARGO_PKG_VERSION")),
            format!("scenario = {}", self.scenario.name()),
            format!("config = {}", self.config_path.display()),
        ];
        h.extend(self.cfg.overrides().iter().map(|o| format!("override = {o}")));
        h.extend(describe_params(&self.params));
        h.push(format!("pump_power = {:.9e} W", self.pump_power));
        h.push(format!("pump_rabi = {:.9e} rad/s", self.pump.omega_p.re));
        h.push(format!("pump_detuning = {:.9e} rad/s", self.pump.delta_p));
        h.extend(extra.iter().cloned());
        h
    }

    fn signal(&self, key: &str, default: Signal) -> Result<Signal, Failure> {
        if !self.cfg.has(key) {
            return Ok(default);
        }
        self.cfg.string(key)?.parse().map_err(|e: String| Failure::Config(format!("{key}: {e}")))
    }

    fn doppler(&self, key: &str, default: Doppler) -> Result<Doppler, Failure> {
        if !self.cfg.has(key) {
            return Ok(default);
        }
        let text = self.cfg.string(key)?;
        match text {
            "off" => Ok(Doppler::Off),
            "resolved" => Ok(Doppler::Resolved),
            _ => text
                .strip_prefix("hermite:")
                .and_then(|n| n.parse().ok())
                .map(Doppler::Hermite)
                .ok_or_else(|| Failure::Config(format!("{key}: expected off, resolved or hermite:<n>, got `{text}`"))),
        }
    }

    fn powers(&self, key: &str, default: Vec<f64>) -> Result<Vec<f64>, Failure> {
        if self.cfg.has(key) { Ok(self.cfg.quantities(key, Dimension::Power)?) } else { Ok(default) }
    }

    fn preparation(&self) -> Result<Option<PreparationStep>, Failure> {
        if !self.cfg.has("preparation") {
            return Ok(None);
        }
        let field = self.signal("preparation.field", Signal::Hyperfine)?;
        let power = self.cfg.quantity("preparation.power", Dimension::Power)?;
        let duration = self.cfg.quantity_or("preparation.duration", Dimension::Time, 500e-6)?;
        Ok(Some(PreparationStep { field, power, duration }))
    }

    fn grid(&self, duration: f64) -> Result<GridSpec, Failure> {
        let classes = self.cfg.count_or("grid.velocity_classes", PROPAGATION_NODES)?;
        Ok(GridSpec {
            nz: self.cfg.count_or("grid.nz", 50)?,
            dt: self.cfg.quantity_or("grid.dt", Dimension::Time, 10e-9)?,
            duration,
            doppler: if classes == 0 { Doppler::Off } else { Doppler::Hermite(classes) },
            pump_levels: self.cfg.count_or("grid.pump_levels", 32)?,
        })
    }

    fn pulses(&self) -> Result<(Option<GaussianPulse>, Option<GaussianPulse>), Failure> {
        let fwhm = self.cfg.quantity_or("pulses.fwhm", Dimension::Time, DEFAULT_PULSE_FWHM)?;
        let center = self.cfg.quantity_or("pulses.center", Dimension::Time, 2.0 * fwhm)?;
        let peak = self.cfg.quantity_or("pulses.peak_rabi", Dimension::AngularFrequency, hz_to_rad(1e5))?;
        let which: Vec<String> = if self.cfg.has("pulses.signals") {
            self.cfg.strings("pulses.signals")?.into_iter().map(String::from).collect()
        } else {
            vec!["zeeman".into(), "hyperfine".into()]
        };
        let mut out = (None, None);
        for w in which {
            let s: Signal = w.parse().map_err(|e: String| Failure::Config(format!("pulses.signals: {e}")))?;
            let p = Some(GaussianPulse::new(center, fwhm, C64::new(peak, 0.0)));
            match s {
                Signal::Zeeman => out.0 = p,
                Signal::Hyperfine => out.1 = p,
            }
        }
        Ok(out)
    }

    fn pulse_lines(&self, proto: &StorageProtocol, grid: &GridSpec) -> Vec<String> {
        let mut h = Vec::new();
        for s in Signal::BOTH {
            if let Some(p) = proto.pulse(s) {
                h.push(format!("{s}_pulse = centre {:.6e} s, fwhm {:.6e} s, peak {:.6e} rad/s", p.center, p.fwhm, p.peak.re));
            }
        }
        if let Some(prep) = &proto.preparation {
            h.push(format!("preparation = {} {:.6e} W for {:.6e} s", prep.field, prep.power, prep.duration));
        }
        h.push(format!(
            "grid = nz {}, dt {:.6e} s, duration {:.6e} s, velocity {:?}, pump levels {}",
            grid.nz, grid.dt, grid.duration, grid.doppler, grid.pump_levels
        ));
        h
    }
}

fn power_grid(max: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| max * k as f64 / (n - 1) as f64).collect()
}

/// Run a scenario and write its CSV files plus a manifest into `out`.
pub fn run(scenario: Scenario, config_path: &Path, out: &Path, overrides: &[String]) -> Result<Vec<PathBuf>, Failure> {
    let mut cfg = Config::load(config_path)?;
    for o in overrides {
        cfg.set(o)?;
    }
    let params = cfg.params()?;
    let pump_power = cfg.quantity_or("pump.power", Dimension::Power, REFERENCE_PUMP_POWER)?;
    let pump_detuning = cfg.quantity_or("pump.detuning", Dimension::AngularFrequency, 0.0)?;
    let pump =
        DriveConfig::pump_only(rabi_from_power(pump_power, params.rabi_calibration_kappa)?).with_detuning(Field::Pump, pump_detuning);
    let ctx = Context { scenario, cfg: &cfg, config_path, params, pump_power, pump };
    let mut inputs = vec![config_path.to_path_buf()];
    let outputs = match scenario {
        Scenario::SpectrumDeit => spectrum_deit(&ctx)?,
        Scenario::ContrastVsPower => contrast_vs_power(&ctx)?,
        Scenario::GroupvelVsPower => groupvel_vs_power(&ctx)?,
        Scenario::Match => match_scenario(&ctx)?,
        Scenario::Propagate => propagate_scenario(&ctx)?,
        Scenario::Store => store(&ctx)?,
        Scenario::DelayEnhancement => delay_enhancement(&ctx)?,
        Scenario::FitGroupvel => fit_groupvel(&ctx, &mut inputs)?,
    };
    write_outputs(out, &ctx, &inputs, outputs)
}

fn write_outputs(out: &Path, ctx: &Context, inputs: &[PathBuf], outputs: Outputs) -> Result<Vec<PathBuf>, Failure> {
    let io = |p: &Path, e: std::io::Error| Failure::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "scenario = {}", ctx.scenario.name());
    for o in ctx.cfg.overrides() {
        let _ = writeln!(manifest, "override = {o}");
    }
    for input in inputs {
        let bytes = std::fs::read(input).map_err(|e| io(input, e))?;
        let _ = writeln!(manifest, "input = {} sha256:{:x}", input.display(), Sha256::digest(&bytes));
    }
    let mut written = Vec::new();
    for (name, body) in outputs {
        let path = out.join(&name);
        std::fs::write(&path, &body).map_err(|e| io(&path, e))?;
        let _ = writeln!(manifest, "output = {name} sha256:{:x}", Sha256::digest(body.as_bytes()));
        written.push(path);
    }
    let path = out.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| io(&path, e))?;
    written.push(path);
    Ok(written)
}

fn spectrum_deit(ctx: &Context) -> Result<Outputs, Failure> {
    let d = DeitSettings::default();
    let cfg = ctx.cfg;
    let s = DeitSettings {
        half_span: cfg.quantity_or("spectrum.half_span", Dimension::AngularFrequency, d.half_span)?,
        points: cfg.count_or("spectrum.points", d.points)?,
        signal_power: cfg.quantity_or("spectrum.signal_power", Dimension::Power, d.signal_power)?,
        zeeman_detuning: cfg.quantity_or("spectrum.zeeman_detuning", Dimension::AngularFrequency, d.zeeman_detuning)?,
        hyperfine_detuning: cfg.quantity_or("spectrum.hyperfine_detuning", Dimension::AngularFrequency, d.hyperfine_detuning)?,
        doppler: ctx.doppler("spectrum.doppler", d.doppler)?,
    };
    if s.points < 3 {
        return Err(Failure::Config("spectrum.points must be at least 3".into()));
    }
    let spectra = deit_spectra(&ctx.params, &ctx.pump, &s)?;
    let header = ctx.header(&[
        format!("sweep = pump, half span {:.6e} rad/s, {} points", s.half_span, s.points),
        format!("signal_power = {:.6e} W each", s.signal_power),
        format!("signal_detunings = zeeman {:.6e}, hyperfine {:.6e} rad/s", s.zeeman_detuning, s.hyperfine_detuning),
        format!("doppler = {:?}", s.doppler),
    ]);
    let mut windows = String::new();
    for line in &header {
        let _ = writeln!(windows, "# {line}");
    }
    windows.push_str("signal,resonance_hz,window_shift_hz,peak_transmission,prominence\n");
    for (k, sig) in Signal::BOTH.into_iter().enumerate() {
        let res = deit_core::units::rad_to_hz(spectra.resonance(sig));
        match spectra.own_window(sig) {
            Some(w) => {
                let at = deit_core::units::rad_to_hz(spectra.spectra[k].delta[w.index]);
                let _ = writeln!(windows, "{sig},{res:.6e},{at:.6e},{:.9e},{:.9e}", w.peak, w.prominence);
            }
            None => {
                let _ = writeln!(windows, "{sig},{res:.6e},,,");
            }
        }
    }
    Ok(vec![("spectrum_deit.csv".into(), spectra.to_csv(&header)), ("spectrum_deit_windows.csv".into(), windows)])
}

fn contrast_vs_power(ctx: &Context) -> Result<Outputs, Failure> {
    let cfg = ctx.cfg;
    let probes: Vec<Signal> = if cfg.has("contrast.probes") {
        cfg.strings("contrast.probes")?
            .into_iter()
            .map(|s| s.parse().map_err(|e: String| Failure::Config(format!("contrast.probes: {e}"))))
            .collect::<Result<_, _>>()?
    } else {
        vec![Signal::Hyperfine, Signal::Zeeman]
    };
    let mut out = Vec::new();
    for probe in probes {
        let d = ContrastSettings::paper(probe);
        let s = ContrastSettings {
            probe,
            background_powers: ctx.powers("contrast.background_powers", d.background_powers)?,
            half_span: cfg.quantity_or("contrast.half_span", Dimension::AngularFrequency, d.half_span)?,
            points: cfg.count_or("contrast.points", d.points)?,
            probe_power: cfg.quantity_or("contrast.probe_power", Dimension::Power, d.probe_power)?,
            doppler: ctx.doppler("contrast.doppler", d.doppler)?,
        };
        if s.points < 3 {
            return Err(Failure::Config("contrast.points must be at least 3".into()));
        }
        let sweep = contrast_sweep(&ctx.params, &ctx.pump, &s)?;
        let header = ctx.header(&[
            format!("probe = {probe}, power {:.6e} W", s.probe_power),
            format!("background = {}", probe.other()),
            format!("probe sweep = half span {:.6e} rad/s, {} points", s.half_span, s.points),
            format!("doppler = {:?}", s.doppler),
        ]);
        out.push((format!("contrast_{probe}.csv"), sweep.to_csv(&header)));
        out.push((format!("contrast_{probe}_spectra.csv"), sweep.spectra_csv(&header)));
    }
    Ok(out)
}

fn groupvel_vs_power(ctx: &Context) -> Result<Outputs, Failure> {
    let field = ctx.signal("groupvel.preparation_field", Signal::Hyperfine)?;
    let powers = ctx.powers("groupvel.powers", power_grid(150e-6, 31))?;
    let duration = ctx.cfg.quantity_or("groupvel.duration", Dimension::Time, 500e-6)?;
    if !(duration > 0.0) {
        return Err(Failure::Config("groupvel.duration must be positive".into()));
    }
    let points = group_velocity_sweep(&ctx.params, &ctx.pump, field, &powers)?;
    let header = ctx.header(&[format!("preparation = {field}, {duration:.6e} s, dephased before probing")]);
    Ok(vec![("groupvel_vs_power.csv".into(), group_velocity_csv(&points, ctx.params.cell_length, &header))])
}

fn match_scenario(ctx: &Context) -> Result<Outputs, Failure> {
    let field = ctx.signal("match.preparation_field", Signal::Hyperfine)?;
    let range = ctx.powers("match.range", vec![0.0, 150e-6])?;
    let [lo, hi] = range[..] else {
        return Err(Failure::Config("match.range must hold two powers".into()));
    };
    let tol = ctx.cfg.quantity_or("match.tolerance", Dimension::Power, 0.1e-6)?;
    let m = match_group_velocities(&ctx.params, &ctx.pump, field, (lo, hi), tol)?;
    let header = ctx.header(&[
        format!("preparation = {field}"),
        format!("bracket = [{lo:.6e}, {hi:.6e}] W, tolerance {tol:.3e} W"),
    ]);
    let mut out = String::new();
    for line in &header {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("preparation_power_W,v_zeeman_m_per_s,v_hyperfine_m_per_s,iterations\n");
    let _ = writeln!(out, "{:.9e},{:.9e},{:.9e},{}", m.power, m.v_zeeman, m.v_hyperfine, m.iterations);
    Ok(vec![("match.csv".into(), out)])
}

fn propagate_scenario(ctx: &Context) -> Result<Outputs, Failure> {
    let (z, h) = ctx.pulses()?;
    let mut proto = StorageProtocol::slow_light(z, h);
    proto.preparation = ctx.preparation()?;
    let duration = ctx.cfg.quantity_or("grid.duration", Dimension::Time, 8e-6)?;
    let grid = ctx.grid(duration)?;
    let map = propagate(&proto, &ctx.params, &ctx.pump, &grid)?;
    let delays = pulse_delays(&map)?;
    let bg = preparation_background(&ctx.params, &ctx.pump, proto.preparation.as_ref())?;
    let header = ctx.header(&ctx.pulse_lines(&proto, &grid));
    let mut summary = String::new();
    for line in &header {
        let _ = writeln!(summary, "# {line}");
    }
    summary.push_str("signal,centroid_delay_s,peak_delay_s,spectral_delay_s,energy_transmission\n");
    for (k, s) in Signal::BOTH.into_iter().enumerate() {
        let Some(d) = delays[k] else { continue };
        let spectral = window_group_delay(&bg, s, s.optical_depth(&ctx.params))? + ctx.params.cell_length / SPEED_OF_LIGHT;
        let e = |f: &[C64]| f.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let _ = writeln!(
            summary,
            "{s},{:.9e},{:.9e},{spectral:.9e},{:.9e}",
            d.centroid,
            d.peak,
            e(map.output(s)) / e(map.input(s))
        );
    }
    let stride = ctx.cfg.count_or("propagate.fieldmap_stride", 10)?;
    Ok(vec![
        ("propagate_traces.csv".into(), map.exit_traces_csv(&header)),
        ("propagate_fieldmap.csv".into(), map.to_csv_long(&header, stride)),
        ("propagate_delays.csv".into(), summary),
    ])
}

fn store(ctx: &Context) -> Result<Outputs, Failure> {
    let cfg = ctx.cfg;
    let (z, h) = ctx.pulses()?;
    let pump_off = cfg.quantity("store.pump_off", Dimension::Time)?;
    let ramp = cfg.quantity_or("store.ramp", Dimension::Time, DEFAULT_RAMP)?;
    let tail = cfg.quantity_or("store.tail", Dimension::Time, 5e-6)?;
    let times = if cfg.has("store.storage_times") {
        cfg.quantities("store.storage_times", Dimension::Time)?
    } else {
        vec![0.0, 10e-6, 50e-6, 100e-6]
    };
    let shown = cfg.quantity_or("store.trace_storage", Dimension::Time, 10e-6)?;
    let prep = ctx.preparation()?;
    let mut rows = String::new();
    let mut traces = None;
    let mut header_lines = Vec::new();
    for &storage in &times {
        let mut proto = StorageProtocol::slow_light(z, h);
        proto.preparation = prep;
        proto.pump_off = Some(pump_off);
        proto.ramp = ramp;
        proto.storage = storage;
        // whole number of steps covering the retrieval
        let dt = cfg.quantity_or("grid.dt", Dimension::Time, 10e-9)?;
        let duration = ((pump_off + 2.0 * ramp + storage + tail) / dt).ceil() * dt;
        let grid = ctx.grid(duration)?;
        if header_lines.is_empty() {
            header_lines = ctx.pulse_lines(&proto, &grid);
            header_lines.push(format!("pump_off = {pump_off:.6e} s, ramp {ramp:.6e} s"));
        }
        let r = storage_run(&proto, &ctx.params, &ctx.pump, &grid)?;
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.9e}"));
        let _ = writeln!(
            rows,
            "{storage:.6e},{},{},{},{}",
            cell(r.efficiency[0]),
            cell(r.efficiency[1]),
            cell(r.leakage[0]),
            cell(r.leakage[1])
        );
        if (storage - shown).abs() <= 1e-12 {
            traces = Some(r.map);
        }
    }
    let header = ctx.header(&header_lines);
    let mut eff = String::new();
    for line in &header {
        let _ = writeln!(eff, "# {line}");
    }
    eff.push_str("storage_time_s,efficiency_zeeman,efficiency_hyperfine,leakage_zeeman,leakage_hyperfine\n");
    eff.push_str(&rows);
    let mut out = vec![("store_efficiency.csv".to_string(), eff)];
    if let Some(map) = traces {
        let mut h = header.clone();
        h.push(format!("storage = {shown:.6e} s"));
        out.push(("store_traces.csv".into(), map.exit_traces_csv(&h)));
    }
    Ok(out)
}

fn delay_enhancement(ctx: &Context) -> Result<Outputs, Failure> {
    let powers = ctx.powers("enhancement.powers", power_grid(150e-6, 16))?;
    let duration = ctx.cfg.quantity_or("enhancement.duration", Dimension::Time, 500e-6)?;
    let points = delay_enhancement_sweep(&ctx.params, &ctx.pump, &powers, duration)?;
    let header = ctx.header(&[format!("preparation = zeeman, {duration:.6e} s; ratio to no preparation")]);
    Ok(vec![("delay_enhancement.csv".into(), enhancement_csv(&points, &header))])
}

fn fit_groupvel(ctx: &Context, inputs: &mut Vec<PathBuf>) -> Result<Outputs, Failure> {
    let cfg = ctx.cfg;
    let base = ctx.config_path.parent().unwrap_or(Path::new("."));
    let mut data = Vec::new();
    for rel in cfg.strings("fit.datasets")? {
        let path = base.join(rel);
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let d = Dataset::from_csv(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        if !matches!(d.observable(), Observable::GroupVelocity { .. }) {
            return Err(Failure::Config(format!("{}: not a group-velocity dataset", path.display())));
        }
        data.push(d);
        inputs.push(path);
    }
    let free: Vec<FitParameter> = if cfg.has("fit.free") {
        cfg.strings("fit.free")?.into_iter().map(str::parse).collect::<Result<_, _>>()?
    } else {
        vec![FitParameter::ExchangeG, FitParameter::OpticalDepthZ, FitParameter::OpticalDepthH]
    };
    let factor = if cfg.has("fit.bound_factor") { cfg.number("fit.bound_factor")? } else { 10.0 };
    if !(factor > 1.0) {
        return Err(Failure::Config("fit.bound_factor must exceed 1".into()));
    }
    let bounds: Vec<Bound> = free
        .iter()
        .map(|&parameter| {
            let v = parameter.get(&ctx.params);
            Bound { parameter, lo: v / factor, hi: v * factor }
        })
        .collect();
    let opts = FitOptions { max_iterations: cfg.count_or("fit.max_iterations", 2000)?, ..FitOptions::default() };
    let model = ForwardModel { pump_power: ctx.pump_power, pump_detuning: ctx.pump.delta_p };
    let result = fit(&data, &model, &ctx.params, &bounds, &opts)?;

    let mut extra = vec![format!("free = {}", free.iter().map(|p| p.name()).collect::<Vec<_>>().join(", "))];
    extra.push(format!("bounds = initial value / {factor} .. x {factor}"));
    let header = ctx.header(&extra);
    let mut text = String::new();
    for line in &header {
        let _ = writeln!(text, "# {line}");
    }
    text.push_str(&result.to_text());

    let fitted_pump = DriveConfig::pump_only(rabi_from_power(ctx.pump_power, result.params.rabi_calibration_kappa)?)
        .with_detuning(Field::Pump, ctx.pump.delta_p);
    let prep = match data[0].observable() {
        Observable::GroupVelocity { preparation, .. } => preparation,
        Observable::Transmission { .. } => unreachable!("checked above"),
    };
    let max_power = data.iter().flat_map(|d| d.rows().iter().map(|r| r.x)).fold(0.0, f64::max);
    let curve = group_velocity_sweep(&result.params, &fitted_pump, prep, &power_grid(max_power, 31))?;
    let mut fitted_header = header.clone();
    fitted_header.extend(describe_params(&result.params).into_iter().map(|l| format!("fitted {l}")));
    Ok(vec![
        ("fit_result.txt".into(), text),
        ("fit_residuals.csv".into(), result.residuals_csv(&data, &header)),
        ("fit_curves.csv".into(), group_velocity_csv(&curve, result.params.cell_length, &fitted_header)),
    ])
}
