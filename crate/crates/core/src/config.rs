//! JSON configuration with unit-suffixed quantities ("6MHz", "2.5mW") and
//! dotted-path overrides.

use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::params::{
    rabi_calibration_from_beam, validate_params, ParamError, TripodParams, RB_D1_REDUCED_DIPOLE,
    REFERENCE_BEAM_DIAMETER,
};
use crate::units::{parse_quantity, Dimension, UnitError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: expected {expected}")]
    Type { key: String, expected: &'static str },
    #[error("key `{key}`: {source}")]
    Unit { key: String, source: UnitError },
    #[error("override `{0}` is not of the form key=value")]
    Override(String),
    #[error("unknown key `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// Parameter keys and the dimension their values carry (`None`: plain number).
pub const PARAM_KEYS: [(&str, Option<Dimension>); 13] = [
    ("gamma_e_z", Some(Dimension::AngularFrequency)),
    ("gamma_e_h", Some(Dimension::AngularFrequency)),
    ("gamma_e_p", Some(Dimension::AngularFrequency)),
    ("gamma_hz", Some(Dimension::AngularFrequency)),
    ("gamma_hp", Some(Dimension::AngularFrequency)),
    ("gamma_zp", Some(Dimension::AngularFrequency)),
    ("exchange_g", Some(Dimension::AngularFrequency)),
    ("doppler_fwhm", Some(Dimension::OrdinaryFrequency)),
    ("optical_depth_z", None),
    ("optical_depth_h", None),
    ("cell_length", Some(Dimension::Length)),
    ("rabi_calibration_kappa", None),
    ("extra_optical_dephasing", Some(Dimension::AngularFrequency)),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    root: Value,
    overrides: Vec<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let root: Value = serde_json::from_str(text)?;
        if !root.is_object() {
            return Err(ConfigError::Type { key: "<root>".into(), expected: "an object" });
        }
        Ok(Config { root, overrides: Vec::new() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Apply `a.b.c=value`. The value is read as JSON when it parses
    /// (numbers, arrays), otherwise kept as a string ("6MHz").
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.into()))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(ConfigError::Override(assignment.into()));
        }
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        let mut node = &mut self.root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            let obj = node.as_object_mut().ok_or_else(|| ConfigError::Type { key: key.into(), expected: "an object path" })?;
            node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        }
        node.as_object_mut()
            .ok_or_else(|| ConfigError::Type { key: key.into(), expected: "an object path" })?
            .insert(parts[parts.len() - 1].to_string(), value);
        self.overrides.push(assignment.to_string());
        Ok(())
    }

    pub fn overrides(&self) -> &[String] {
        &self.overrides
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        key.split('.').try_fold(&self.root, |node, part| node.get(part))
    }

    pub fn has(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    fn value(&self, key: &str) -> Result<&Value, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing(key.into()))
    }

    /// A quantity given as a number (SI) or a unit string.
    pub fn quantity(&self, key: &str, dim: Dimension) -> Result<f64, ConfigError> {
        quantity_of(key, self.value(key)?, dim)
    }

    pub fn quantity_or(&self, key: &str, dim: Dimension, default: f64) -> Result<f64, ConfigError> {
        if self.has(key) { self.quantity(key, dim) } else { Ok(default) }
    }

    pub fn quantities(&self, key: &str, dim: Dimension) -> Result<Vec<f64>, ConfigError> {
        let arr = self.value(key)?.as_array().ok_or_else(|| ConfigError::Type { key: key.into(), expected: "an array" })?;
        arr.iter().enumerate().map(|(i, v)| quantity_of(&format!("{key}[{i}]"), v, dim)).collect()
    }

    pub fn number(&self, key: &str) -> Result<f64, ConfigError> {
        self.value(key)?.as_f64().ok_or_else(|| ConfigError::Type { key: key.into(), expected: "a number" })
    }

    pub fn count(&self, key: &str) -> Result<usize, ConfigError> {
        self.value(key)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| ConfigError::Type { key: key.into(), expected: "a non-negative integer" })
    }

    pub fn count_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        if self.has(key) { self.count(key) } else { Ok(default) }
    }

    pub fn string(&self, key: &str) -> Result<&str, ConfigError> {
        self.value(key)?.as_str().ok_or_else(|| ConfigError::Type { key: key.into(), expected: "a string" })
    }

    pub fn strings(&self, key: &str) -> Result<Vec<&str>, ConfigError> {
        let arr = self.value(key)?.as_array().ok_or_else(|| ConfigError::Type { key: key.into(), expected: "an array" })?;
        arr.iter()
            .map(|v| v.as_str().ok_or_else(|| ConfigError::Type { key: key.into(), expected: "an array of strings" }))
            .collect()
    }

    /// Medium parameters from the `params` object. Missing keys fall back to
    /// the reference set; `rabi_calibration_kappa` may be `"beam"` for the
    /// first-principles value.
    pub fn params(&self) -> Result<TripodParams, ConfigError> {
        let mut p = TripodParams::reference();
        let Some(obj) = self.get("params") else { return Ok(p) };
        let obj = obj.as_object().ok_or_else(|| ConfigError::Type { key: "params".into(), expected: "an object" })?;
        for key in obj.keys() {
            if !PARAM_KEYS.iter().any(|(k, _)| k == key) {
                return Err(ConfigError::Unknown(format!("params.{key}")));
            }
        }
        for (name, dim) in PARAM_KEYS {
            let Some(v) = obj.get(name) else { continue };
            let key = format!("params.{name}");
            let value = match (name, dim) {
                ("rabi_calibration_kappa", _) if v.as_str() == Some("beam") => {
                    rabi_calibration_from_beam(RB_D1_REDUCED_DIPOLE / 3f64.sqrt(), REFERENCE_BEAM_DIAMETER)
                }
                (_, Some(d)) => quantity_of(&key, v, d)?,
                (_, None) => v.as_f64().ok_or(ConfigError::Type { key, expected: "a number" })?,
            };
            set_param(&mut p, name, value);
        }
        Ok(validate_params(p)?)
    }

    /// Compact JSON of the full document (after overrides).
    pub fn to_json(&self) -> String {
        self.root.to_string()
    }
}

fn quantity_of(key: &str, v: &Value, dim: Dimension) -> Result<f64, ConfigError> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| ConfigError::Type { key: key.into(), expected: "a finite number" }),
        Value::String(s) => parse_quantity(s, dim).map_err(|source| ConfigError::Unit { key: key.into(), source }),
        _ => Err(ConfigError::Type { key: key.into(), expected: "a number or a quantity string" }),
    }
}

fn set_param(p: &mut TripodParams, name: &str, v: f64) {
    match name {
        "gamma_e_z" => p.gamma_e_z = v,
        "gamma_e_h" => p.gamma_e_h = v,
        "gamma_e_p" => p.gamma_e_p = v,
        "gamma_hz" => p.gamma_hz = v,
        "gamma_hp" => p.gamma_hp = v,
        "gamma_zp" => p.gamma_zp = v,
        "exchange_g" => p.exchange_g = v,
        "doppler_fwhm" => p.doppler_fwhm = v,
        "optical_depth_z" => p.optical_depth_z = v,
        "optical_depth_h" => p.optical_depth_h = v,
        "cell_length" => p.cell_length = v,
        "rabi_calibration_kappa" => p.rabi_calibration_kappa = v,
        "extra_optical_dephasing" => p.extra_optical_dephasing = v,
        _ => unreachable!("keys come from PARAM_KEYS"),
    }
}

/// `name = value` lines for every medium parameter, SI units.
pub fn describe_params(p: &TripodParams) -> Vec<String> {
    let values = [
        p.gamma_e_z,
        p.gamma_e_h,
        p.gamma_e_p,
        p.gamma_hz,
        p.gamma_hp,
        p.gamma_zp,
        p.exchange_g,
        p.doppler_fwhm,
        p.optical_depth_z,
        p.optical_depth_h,
        p.cell_length,
        p.rabi_calibration_kappa,
        p.extra_optical_dephasing,
    ];
    PARAM_KEYS
        .iter()
        .zip(values)
        .map(|((name, dim), v)| {
            let unit = match dim {
                Some(Dimension::AngularFrequency) => " rad/s",
                Some(Dimension::OrdinaryFrequency) => " Hz",
                Some(Dimension::Length) => " m",
                _ if *name == "rabi_calibration_kappa" => " rad/(s sqrt(W))",
                _ => "",
            };
            format!("{name} = {v:.9e}{unit}")
        })
        .collect()
}
