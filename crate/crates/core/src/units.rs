//! Physical constants and unit-suffixed quantity parsing.
//!
//! Every frequency-like value inside the crate is an angular frequency in
//! rad/s. Configuration files quote ordinary frequencies ("6MHz") and the
//! parser multiplies them by 2π on the way in.

use std::f64::consts::TAU;

use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

/// Ordinary frequency (Hz) to angular frequency (rad/s).
#[inline]
pub fn hz_to_rad(f: f64) -> f64 {
    TAU * f
}

/// Angular frequency (rad/s) to ordinary frequency (Hz).
#[inline]
pub fn rad_to_hz(w: f64) -> f64 {
    w / TAU
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitError {
    #[error("cannot parse quantity `{0}`")]
    Malformed(String),
    #[error("unit `{unit}` in `{text}` is not a {expected}")]
    WrongDimension {
        text: String,
        unit: String,
        expected: &'static str,
    },
}

/// Physical dimension a quantity string is expected to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    /// Returned in rad/s. Hz-family suffixes are multiplied by 2π.
    AngularFrequency,
    /// Returned in Hz (used for the Doppler FWHM, which is quoted as an
    /// ordinary frequency width).
    OrdinaryFrequency,
    /// Returned in W.
    Power,
    /// Returned in m.
    Length,
    /// Returned in s.
    Time,
}

impl Dimension {
    fn name(self) -> &'static str {
        match self {
            Dimension::AngularFrequency | Dimension::OrdinaryFrequency => "frequency",
            Dimension::Power => "power",
            Dimension::Length => "length",
            Dimension::Time => "time",
        }
    }
}

fn split_number(text: &str) -> Option<(f64, &str)> {
    let t = text.trim();
    // longest numeric prefix that parses
    let mut end = 0;
    for (i, c) in t.char_indices() {
        if c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E') {
            end = i + c.len_utf8();
        } else {
            break;
        }
    }
    // an exponent marker glued to a unit ("5e" of "5eV") is not supported
    // anyway, so shrink until the prefix parses
    while end > 0 {
        if let Ok(v) = t[..end].parse::<f64>() {
            return Some((v, t[end..].trim()));
        }
        end -= 1;
    }
    None
}

/// Parse a quantity such as `"6MHz"`, `"2.5 mW"`, `"12cm"` or `"10us"`.
///
/// A bare number is taken to be in the SI base unit of the dimension
/// (rad/s for angular frequencies, Hz for ordinary ones).
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64, UnitError> {
    let (value, unit) = split_number(text).ok_or_else(|| UnitError::Malformed(text.into()))?;
    if !value.is_finite() {
        return Err(UnitError::Malformed(text.into()));
    }
    let wrong = || UnitError::WrongDimension {
        text: text.into(),
        unit: unit.into(),
        expected: dim.name(),
    };
    let scale = match dim {
        Dimension::AngularFrequency | Dimension::OrdinaryFrequency => {
            let hz = match unit {
                "" => None,
                "Hz" => Some(1.0),
                "kHz" => Some(1e3),
                "MHz" => Some(1e6),
                "GHz" => Some(1e9),
                "rad/s" => {
                    return Ok(if dim == Dimension::AngularFrequency {
                        value
                    } else {
                        rad_to_hz(value)
                    })
                }
                _ => return Err(wrong()),
            };
            match (dim, hz) {
                (Dimension::AngularFrequency, Some(s)) => TAU * s,
                (Dimension::OrdinaryFrequency, Some(s)) => s,
                (_, None) => 1.0,
                _ => unreachable!(),
            }
        }
        Dimension::Power => match unit {
            "" | "W" => 1.0,
            "mW" => 1e-3,
            "uW" | "µW" | "μW" => 1e-6,
            "nW" => 1e-9,
            _ => return Err(wrong()),
        },
        Dimension::Length => match unit {
            "" | "m" => 1.0,
            "cm" => 1e-2,
            "mm" => 1e-3,
            "um" | "µm" | "μm" => 1e-6,
            _ => return Err(wrong()),
        },
        Dimension::Time => match unit {
            "" | "s" => 1.0,
            "ms" => 1e-3,
            "us" | "µs" | "μs" => 1e-6,
            "ns" => 1e-9,
            _ => return Err(wrong()),
        },
    };
    Ok(value * scale)
}
